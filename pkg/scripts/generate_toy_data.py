"""Write the synthetic multilingual toy corpus used by the tests and example spec."""

import click

from multilingual import load_registry, write_toy_corpus


@click.command()
@click.option('--registry', default='ted', help='Registry file or bundled name (ted, opus)')
@click.option('--output-dir', default='data/toy', help='Output directory')
@click.option('--seed', default=0, help='Seed for the constructed languages and sentences')
@click.option('--vocab-words', default=24, help='Source vocabulary size')
@click.option('--scale', default=1e-3, help='Fraction of each language\'s registry size to generate')
@click.option('--min-size', default=20, help='Smallest corpus per pair')
@click.option('--max-size', default=None, type=int, help='Largest corpus per pair')
@click.option('--valid', 'valid_n', default=5, help='Held-out validation sentences per pair')
@click.option('--test', 'test_n', default=5, help='Held-out test sentences per pair')
def main(registry, output_dir, seed, vocab_words, scale, min_size, max_size, valid_n, test_n):
    """Generate constructed-language bitext for every pair in the registry."""
    reg = load_registry(registry)
    counts = write_toy_corpus(
        output_dir, reg, seed=seed, valid_n=valid_n, test_n=test_n,
        vocab_words=vocab_words, scale=scale, min_size=min_size, max_size=max_size,
    )
    for pair, sizes in counts.items():
        click.echo(f"{pair}: {sizes['train']} train, {sizes['valid']} valid, {sizes['test']} test")
    click.echo(f"Saved {len(counts)} pairs to {output_dir}")


if __name__ == '__main__':
    main()
