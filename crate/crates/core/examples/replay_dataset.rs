//! Generate a small synthetic city, replay it through every engine and
//! check the planted structure came back out.
//!
//! cargo run --release --example replay_dataset

use icms::energy::BlockBasis;
use icms::replay::{generate_dataset, run_replay, Dataset, Profile};

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("icms-replay-example");
    let profile = Profile { streets: 2, posts_per_street: 3, noise: 0.0, ..Profile::default() };
    let truth = generate_dataset(7, &profile, &dir)?;
    println!("dataset in {}", dir.display());

    let dataset = Dataset::load(&dir, None)?;
    let out = run_replay(&dataset, None)?;
    print!("{}", out.report.to_canonical_json());

    let mut found = Vec::new();
    for street in out.state.registry.streets() {
        found.extend(out.state.blocks(street, None, BlockBasis::Observed)?);
    }
    found.sort_by(|a, b| (&a.street_id, a.start).cmp(&(&b.street_id, b.start)));
    let mut planted = truth.zero_blocks.clone();
    planted.sort_by(|a, b| (&a.street_id, a.start).cmp(&(&b.street_id, b.start)));
    println!("planted blocks recovered: {}", found == planted);
    println!("issues: {} (planted clusters: {})", out.state.issues().len(), truth.detection_clusters.len());
    Ok(())
}
