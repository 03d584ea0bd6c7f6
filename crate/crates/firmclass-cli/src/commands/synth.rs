use firmclass::synth::{generate, SynthConfig};
use firmclass::{Error, Result};

use crate::SynthArgs;

pub fn run(args: &SynthArgs) -> Result<()> {
    let branching: Vec<usize> = args
        .branching
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad branching factor '{s}'")))
        })
        .collect::<Result<_>>()?;
    let cfg = SynthConfig {
        levels: branching.len(),
        branching,
        dimension: args.dimension,
        firms_per_leaf: args.firms_per_leaf,
        periods: args.periods,
        separation: args.separation,
        noise: args.noise,
        drift: args.drift,
        churn: args.churn,
        focal_level: args.focal_level,
        seed: args.seed,
    };
    let files = generate(&cfg)?;
    files.write_dir(&args.out_dir)?;
    println!(
        "wrote taxonomy.tsv, assignments.csv, truth.csv, firm_embeddings.csv, definitions.csv to {}",
        args.out_dir.display()
    );
    Ok(())
}
