import logging
from functools import wraps
from pathlib import Path

import click
import pandas as pd
from dotenv import load_dotenv

from evaluation import evaluate_corpus, translate_lines
from multilingual import budget_report, build_grouping, load_registry, load_split, write_toy_corpus
from multilingual.registry import BUNDLED_REGISTRIES
from numcore import ContractError
from seq2seq import AdapterConfig, ModelConfig
from training import group_languages

from .config import NO_EMB_SUFFIX, REGIMES, load_experiment_spec
from .engine import CELL_FILE, Cell, CellResult, ExperimentRunner, load_group_model

load_dotenv()

# Configure Logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

# Every library error derives from one of these.
LIBRARY_ERRORS = (ValueError, KeyError, IndexError, OSError, ContractError)


def library_errors(command):
    """Turn library errors into a one-line ClickException (exit code 1)."""

    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except LIBRARY_ERRORS as e:
            message = e.args[0] if isinstance(e, KeyError) and e.args else str(e)
            raise click.ClickException(message) from e

    return wrapper


def _spec(ctx: click.Context, regimes=None, check_files: bool = True, need_regimes: bool = True):
    """Load the experiment file, apply env and global flags, and validate."""
    spec = load_experiment_spec(ctx.obj["config"])
    if ctx.obj["seed"] is not None:
        spec.seeds = [ctx.obj["seed"]]
    if regimes is not None:
        spec.regimes = list(regimes)
    spec.validate(check_files=check_files, need_regimes=need_regimes)
    return spec


@click.group(context_settings={"auto_envvar_prefix": "FAMADAPT"})
@click.option('--seed', type=int, default=None, help='Seed for backbone, sampling and dropout (overrides the experiment file)')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help='Experiment spec file (key=value lines)')
@click.option('--out-dir', default='results', type=click.Path(file_okay=False), help='Root directory for all outputs')
@click.option('--workers', default=1, type=click.IntRange(min=1), help='Parallel groups or experiment cells')
@click.option('--verbose', is_flag=True, help='Debug logging')
@click.pass_context
def cli(ctx, seed, config_path, out_dir, workers, verbose):
    """Language-family adapters for one-to-many translation."""
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    ctx.ensure_object(dict)
    ctx.obj.update(seed=seed, config=config_path, out_dir=Path(out_dir), workers=workers)


@cli.command('generate-data')
@click.option('--out', 'out_dir', default='data/toy', type=click.Path(file_okay=False), help='Directory for the corpus files')
@click.option('--registry', default='ted', help=f"Registry file or bundled name {BUNDLED_REGISTRIES}")
@click.option('--vocab-words', default=24, type=click.IntRange(min=2), help='Source vocabulary size')
@click.option('--valid', 'valid_n', default=5, type=click.IntRange(min=1), help='Validation sentences per pair')
@click.option('--test', 'test_n', default=5, type=click.IntRange(min=1), help='Test sentences per pair')
@click.pass_context
@library_errors
def generate_data(ctx, out_dir, registry, vocab_words, valid_n, test_n):
    """Write the synthetic toy corpus (three constructed language families)."""
    seed = ctx.obj["seed"] or 0
    counts = write_toy_corpus(out_dir, load_registry(registry), seed=seed, valid_n=valid_n, test_n=test_n,
                              vocab_words=vocab_words)
    total = sum(c["train"] for c in counts.values())
    click.echo(f"Wrote {len(counts)} pairs ({total:,} training sentences) to {out_dir}")


@cli.command()
@click.option('--regime', type=click.Choice(REGIMES), required=True, help='Adapter grouping to train')
@click.option('--bottleneck', type=click.IntRange(min=1), default=None, help='Adapter size (default: first in spec)')
@click.option('--dropout', type=click.FloatRange(0.0, 1.0, max_open=True), default=None,
              help='Dropout (default: first in spec)')
@click.option('--no-embedding-adapters', is_flag=True, help='Ablation: no adapters on the embedding outputs')
@click.pass_context
@library_errors
def train(ctx, regime, bottleneck, dropout, no_embedding_adapters):
    """Train one regime: one adapter set per group, best/last checkpoints and logs."""
    spec = _spec(ctx, regimes=[regime])
    variant = regime + NO_EMB_SUFFIX if no_embedding_adapters and regime != "full_ft" else regime
    seed = spec.sweep_seeds()[0]
    cell = Cell(
        seed,
        0 if regime == "full_ft" else (bottleneck or spec.sweep_bottlenecks()[0]),
        spec.sweep_dropouts()[0] if dropout is None else dropout,
        variant,
    )
    runner = ExperimentRunner(spec, ctx.obj["out_dir"], workers=ctx.obj["workers"])
    result = runner.run_cell(cell, group_workers=ctx.obj["workers"])
    cell_dir = ctx.obj["out_dir"] / cell.relative_dir
    click.echo(f"Trained {len(result.groups)} groups under {cell_dir}")
    for pair, bleu in result.scores.items():
        click.echo(f"  {pair}\t{bleu:.2f}")


@cli.command()
@click.option('--checkpoint', required=True, type=click.Path(dir_okay=False), help='Group checkpoint (best.ckpt)')
@click.option('--input', 'input_path', required=True, type=click.Path(dir_okay=False), help='Source sentences, one per line')
@click.option('--output', 'output_path', required=True, type=click.Path(dir_okay=False), help='Translations, one per line')
@click.option('--lang', required=True, help='Target language code')
@click.option('--beam', default=5, type=click.IntRange(min=1), help='Beam size (1 = greedy)')
@click.option('--length-penalty', default=1.0, type=float, help='Final ranking by logprob / len**penalty')
@click.option('--backbone', type=click.Path(dir_okay=False), default=None, help='backbone.ckpt (default: found above the checkpoint)')
@click.option('--vocab', type=click.Path(dir_okay=False), default=None, help='vocab.txt (default: found above the checkpoint)')
@click.pass_context
@library_errors
def translate(ctx, checkpoint, input_path, output_path, lang, beam, length_penalty, backbone, vocab):
    """Translate a file with a trained group checkpoint."""
    model, vocab_obj, ckpt = load_group_model(checkpoint, backbone, vocab)
    if lang not in vocab_obj.tag_ids():
        raise click.ClickException(f"unknown language '{lang}' (no __{lang}__ tag in the vocabulary)")
    if lang not in group_languages(ckpt):
        logger.warning(f"'{lang}' was not trained in group '{ckpt.metadata['group_id']}'")
    input_file = Path(input_path)
    if not input_file.exists():
        raise click.ClickException(f"input file not found: {input_file}")
    lines = input_file.read_text(encoding="utf-8").splitlines()
    outputs = translate_lines(model, vocab_obj, lines, lang, beam=beam, length_penalty=length_penalty,
                              workers=ctx.obj["workers"])
    Path(output_path).write_text("".join(line + "\n" for line in outputs), encoding="utf-8")
    logger.info(f"Translated {len(lines)} lines into {lang}: {output_path}")


@cli.command('eval')
@click.option('--cell-dir', required=True, type=click.Path(file_okay=False),
              help='Regime directory holding <group>/best.ckpt')
@click.option('--split', type=click.Choice(["valid", "test"]), default='test', help='Bitext split to score')
@click.option('--beam', default=None, type=click.IntRange(min=1), help='Beam size (default: from the experiment file)')
@click.pass_context
@library_errors
def evaluate(ctx, cell_dir, split, beam):
    """Decode a split with every group of a trained regime and report BLEU per pair."""
    cell_dir = Path(cell_dir)
    checkpoints = sorted(cell_dir.glob("*/best.ckpt"))
    if not checkpoints:
        raise click.ClickException(f"no <group>/best.ckpt under {cell_dir}")
    spec = _spec(ctx, need_regimes=False)
    registry = spec.load_registry()
    beam = beam or spec.beam
    cell_file = cell_dir / CELL_FILE
    regime = CellResult.from_json(cell_file.read_text(encoding="utf-8")).regime if cell_file.exists() else cell_dir.name
    logger.info(f"Evaluating regime '{regime}' ({len(checkpoints)} groups) on {split}")

    rows = []
    for path in checkpoints:
        model, vocab, ckpt = load_group_model(path)
        pairs = [registry[code].pair for code in group_languages(ckpt)]
        corpora = load_split(spec.data_dir, split, pairs, vocab)
        for pair in pairs:
            result = evaluate_corpus(model, vocab, corpora[pair], beam, spec.length_penalty,
                                     workers=ctx.obj["workers"])
            rows.append({"regime": regime, "pair": pair, "group": ckpt.metadata["group_id"], "bleu": result.bleu})
    table = pd.DataFrame(rows, columns=["regime", "pair", "group", "bleu"])
    out_path = cell_dir / f"bleu_{split}.tsv"
    table.to_csv(out_path, sep="\t", index=False, float_format="%.4f")
    click.echo(table.to_string(index=False))
    click.echo(f"Mean BLEU {table['bleu'].mean():.2f} over {len(table)} pairs -> {out_path}")


@cli.command()
@click.option('--components', default=None, type=click.IntRange(min=1), help='Mixture components (default: families)')
@click.option('--embeddings', type=click.Path(dir_okay=False), default=None,
              help='Externally computed sentence vectors instead of the backbone encoder')
@click.pass_context
@library_errors
def cluster(ctx, components, embeddings):
    """Cluster languages from sentence representations and emit a custom grouping."""
    spec = _spec(ctx, check_files=embeddings is None, need_regimes=False)
    if components is not None:
        spec.cluster.components = components
    if embeddings is not None:
        if not Path(embeddings).exists():
            raise click.ClickException(f"embedding file not found: {embeddings}")
        spec.cluster.embeddings = embeddings
    runner = ExperimentRunner(spec, ctx.obj["out_dir"])
    out = ctx.obj["out_dir"] / "clustering"
    report = runner.cluster(spec.sweep_seeds()[0], out_dir=out)
    click.echo(report.confusion.to_string())
    click.echo(f"Agreement with families: {report.agreements}/{int(report.confusion.values.sum())}; "
               f"mis-allocated: {', '.join(report.misallocated) or 'none'}")
    click.echo(f"Grouping written to {out / 'grouping.tsv'}")


@cli.command()
@click.option('--registry', default='ted', help=f"Registry file or bundled name {BUNDLED_REGISTRIES}")
@click.option('--vocab-size', default=250054, type=click.IntRange(min=1), help='Backbone vocabulary size')
@click.option('--model-dim', default=1024, type=click.IntRange(min=1), help='Hidden size h')
@click.option('--ff-dim', default=4096, type=click.IntRange(min=1), help='Feed-forward size')
@click.option('--heads', default=16, type=click.IntRange(min=1), help='Attention heads')
@click.option('--layers', default=12, type=click.IntRange(min=0), help='Encoder and decoder layers (each)')
@click.option('--bottleneck', default=512, type=click.IntRange(min=1), help='Adapter size d')
@click.option('--no-embedding-adapters', is_flag=True, help='Leave out the two embedding adapters')
@click.option('--output', 'output_path', type=click.Path(dir_okay=False), default=None, help='Also write the table as TSV')
@library_errors
def params(registry, vocab_size, model_dim, ff_dim, heads, layers, bottleneck, no_embedding_adapters, output_path):
    """Trainable parameters of every regime (defaults: mBART-50-sized backbone)."""
    reg = load_registry(registry)
    model_cfg = ModelConfig(vocab_size=vocab_size, model_dim=model_dim, ff_dim=ff_dim, heads=heads,
                            enc_layers=layers, dec_layers=layers, max_len=1024,
                            use_embedding_adapters=not no_embedding_adapters)
    model_cfg.validate()
    adapter_cfg = AdapterConfig(model_dim=model_dim, bottleneck=bottleneck)
    adapter_cfg.validate()
    reports = [budget_report(model_cfg, adapter_cfg, build_grouping(reg, kind))
               for kind in ("agnostic", "family", "pair")]
    reports.append(budget_report(model_cfg, adapter_cfg, build_grouping(reg, "agnostic"), full_finetune=True))
    table = pd.DataFrame([r.to_dict() for r in reports])
    click.echo(table.to_string(index=False, formatters={"trainable_fraction": "{:.4%}".format}))
    if output_path:
        table.to_csv(output_path, sep="\t", index=False)


@cli.command()
@click.option('--fresh', is_flag=True, help='Ignore finished cells and checkpoints from earlier runs')
@click.pass_context
@library_errors
def experiment(ctx, fresh):
    """Run every regime x sweep point x seed from the experiment file and write the report."""
    spec = _spec(ctx)
    runner = ExperimentRunner(spec, ctx.obj["out_dir"], workers=ctx.obj["workers"], resume=not fresh)
    results, files = runner.run()
    click.echo(f"{len(results)} cells complete; report in {files.summary.parent}")


if __name__ == '__main__':
    cli()
