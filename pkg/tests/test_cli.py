import json
import logging
from collections import OrderedDict

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from clustering import EmbeddingBatch, save_embeddings
from orchestrator.main import cli

TINY_SPEC = """registry=ted
data_dir={data_dir}
regime=family
bottleneck=4
dropout=0.0
seed=0
beam=1
model.model_dim=8
model.ff_dim=16
model.heads=2
model.enc_layers=1
model.dec_layers=1
model.max_len=24
train.max_updates=2
train.warmup_updates=1
train.eval_interval_updates=1
train.batch_tokens=32
train.update_frequency=1
"""


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Toy corpus plus one trained family cell, shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()
    data_dir = root / "data"
    result = runner.invoke(cli, ["generate-data", "--out", str(data_dir), "--vocab-words", "6",
                                 "--valid", "2", "--test", "2"])
    assert result.exit_code == 0, result.output
    assert "Wrote 17 pairs" in result.output

    spec_path = root / "tiny.spec"
    spec_path.write_text(TINY_SPEC.format(data_dir=data_dir), encoding="utf-8")
    out_dir = root / "out"
    result = runner.invoke(cli, ["--config", str(spec_path), "--out-dir", str(out_dir), "train", "--regime", "family"])
    assert result.exit_code == 0, result.output
    return {"root": root, "spec": spec_path, "out": out_dir, "cell": out_dir / "seed-0" / "b4-d0" / "family",
            "output": result.output}


def test_params_prints_the_budget_table(tmp_path):
    out = tmp_path / "budget.tsv"
    result = CliRunner().invoke(cli, ["params", "--output", str(out)])
    assert result.exit_code == 0, result.output
    assert "27356160" in result.output
    table = pd.read_csv(out, sep="\t").set_index("regime")
    assert table.loc["agnostic", "total"] == 27_356_160
    assert table.loc["family", "total"] == 3 * 27_356_160
    assert table.loc["family", "groups"] == 3


def test_train_writes_a_cell(trained):
    cell = trained["cell"]
    assert "Trained 3 groups" in trained["output"]
    assert "en-hr" in trained["output"]
    record = json.loads((cell / "cell.json").read_text(encoding="utf-8"))
    assert record["regime"] == "family"
    for group in ("Balto-Slavic", "Indo-Iranian", "Austronesian"):
        assert (cell / group / "best.ckpt").exists()
        assert (cell / group / "last.ckpt").exists()
    assert (trained["out"] / "vocab.txt").exists()
    assert (trained["out"] / "seed-0" / "backbone.ckpt").exists()


def test_unknown_regime_is_a_usage_error():
    result = CliRunner().invoke(cli, ["train", "--regime", "bogus"])
    assert result.exit_code == 2


def test_missing_spec_file_is_reported(tmp_path):
    result = CliRunner().invoke(cli, ["--config", str(tmp_path / "nope.spec"), "train", "--regime", "family"])
    assert result.exit_code == 1
    assert "spec file not found" in result.output


def test_translate_keeps_line_alignment(trained, tmp_path):
    source = tmp_path / "in.txt"
    source.write_text("e1 e2 e3\n\ne0\n", encoding="utf-8")
    target = tmp_path / "out.txt"
    checkpoint = trained["cell"] / "Balto-Slavic" / "best.ckpt"
    result = CliRunner().invoke(cli, ["translate", "--checkpoint", str(checkpoint), "--input", str(source),
                                      "--output", str(target), "--lang", "hr", "--beam", "2"])
    assert result.exit_code == 0, result.output
    lines = target.read_text(encoding="utf-8").split("\n")
    assert len(lines) == 4 and lines[-1] == ""
    assert lines[1] == ""


def test_translate_rejects_an_unknown_language(trained, tmp_path):
    source = tmp_path / "in.txt"
    source.write_text("e1\n", encoding="utf-8")
    checkpoint = trained["cell"] / "Balto-Slavic" / "best.ckpt"
    result = CliRunner().invoke(cli, ["translate", "--checkpoint", str(checkpoint), "--input", str(source),
                                      "--output", str(tmp_path / "out.txt"), "--lang", "zz"])
    assert result.exit_code == 1
    assert "zz" in result.output


def test_eval_scores_every_pair(trained):
    result = CliRunner().invoke(cli, ["--config", str(trained["spec"]), "eval", "--cell-dir", str(trained["cell"]),
                                      "--split", "valid"])
    assert result.exit_code == 0, result.output
    table = pd.read_csv(trained["cell"] / "bleu_valid.tsv", sep="\t")
    assert len(table) == 17
    assert table["bleu"].between(0.0, 100.0).all()


def test_eval_reads_the_regime_from_the_cell(trained, tmp_path):
    spec_path = tmp_path / "no_regime.spec"
    spec_path.write_text(trained["spec"].read_text(encoding="utf-8").replace("regime=family\n", ""),
                         encoding="utf-8")
    result = CliRunner().invoke(cli, ["--config", str(spec_path), "eval", "--cell-dir", str(trained["cell"]),
                                      "--split", "valid"])
    assert result.exit_code == 0, result.output
    table = pd.read_csv(trained["cell"] / "bleu_valid.tsv", sep="\t")
    assert list(table.columns) == ["regime", "pair", "group", "bleu"]
    assert (table["regime"] == "family").all()


def test_translate_reports_a_vocabulary_that_outgrew_the_checkpoint(trained, tmp_path):
    vocab = tmp_path / "vocab.txt"
    extra = "".join(f"zz{i}\n" for i in range(10))
    vocab.write_text((trained["out"] / "vocab.txt").read_text(encoding="utf-8") + extra, encoding="utf-8")
    source = tmp_path / "in.txt"
    source.write_text("zz9\n", encoding="utf-8")
    checkpoint = trained["cell"] / "Balto-Slavic" / "best.ckpt"
    result = CliRunner().invoke(cli, ["translate", "--checkpoint", str(checkpoint), "--input", str(source),
                                      "--output", str(tmp_path / "out.txt"), "--lang", "hr", "--vocab", str(vocab)])
    assert result.exit_code == 1
    assert "out of range" in result.output
    assert "Traceback" not in result.output


def test_cluster_writes_a_grouping(trained):
    result = CliRunner().invoke(cli, ["--config", str(trained["spec"]), "--out-dir", str(trained["out"]),
                                      "cluster", "--components", "3"])
    assert result.exit_code == 0, result.output
    assert "Agreement with families" in result.output
    grouping = trained["out"] / "clustering" / "grouping.tsv"
    assert grouping.exists()
    assert len(grouping.read_text(encoding="utf-8").split()) >= 17


def test_cluster_recovers_families_from_planted_vectors(trained, ted_registry, tmp_path):
    rng = np.random.default_rng(0)
    families = ted_registry.families()
    vectors = OrderedDict()
    for code in ted_registry.codes:
        center = np.zeros(4)
        center[families.index(ted_registry[code].family)] = 10.0
        vectors[code] = center + 0.1 * rng.normal(size=(10, 4))
    embeddings = tmp_path / "vectors.txt"
    save_embeddings(EmbeddingBatch(vectors), embeddings)

    out_dir = tmp_path / "out"
    result = CliRunner().invoke(cli, ["--config", str(trained["spec"]), "--out-dir", str(out_dir), "cluster",
                                      "--embeddings", str(embeddings)])
    assert result.exit_code == 0, result.output
    assert f"Agreement with families: {len(ted_registry.codes)}/{len(ted_registry.codes)}" in result.output
    assert "mis-allocated: none" in result.output
    assert (out_dir / "clustering" / "grouping.tsv").exists()


def test_experiment_resumes_without_retraining(trained, tmp_path, caplog):
    spec_path = tmp_path / "exp.spec"
    spec_path.write_text(trained["spec"].read_text(encoding="utf-8").replace("regime=family\n",
                                                                            "regime=agnostic\nregime=gmm\n"),
                         encoding="utf-8")
    out_dir = tmp_path / "out"
    args = ["--config", str(spec_path), "--out-dir", str(out_dir), "experiment"]
    result = CliRunner().invoke(cli, args)
    assert result.exit_code == 0, result.output
    assert "2 cells complete" in result.output
    assert (out_dir / "report" / "scores.tsv").exists()
    assert (out_dir / "seed-0" / "clustering" / "grouping.tsv").exists()

    written = sorted(out_dir.glob("seed-0/b4-d0/*/**/*.ckpt")) + sorted(out_dir.glob("seed-0/b4-d0/*/cell.json"))
    assert len(written) >= 4
    before = {path: (path.stat().st_mtime_ns, path.read_bytes()) for path in written}

    with caplog.at_level(logging.INFO):
        result = CliRunner().invoke(cli, args)
    assert result.exit_code == 0, result.output
    assert "2 cells complete" in result.output
    assert sum("already complete; skipping" in r.getMessage() for r in caplog.records) == 2
    assert {path: (path.stat().st_mtime_ns, path.read_bytes()) for path in written} == before
