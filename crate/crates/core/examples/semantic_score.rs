//! Score classifier outputs against the bundled toy taxonomy and print the
//! CSV report with its summary.
//!
//! ```text
//! cargo run --example semantic_score -- [taxonomy.jsonl] [predictions.jsonl]
//! ```

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use wavegate::semantic::{read_predictions, score_predictions, Taxonomy};

fn main() -> wavegate::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let args: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    let taxonomy = args.first().cloned().unwrap_or(fixtures.join("toy_taxonomy.jsonl"));
    let predictions = args.get(1).cloned().unwrap_or(fixtures.join("predictions.jsonl"));

    let t = Taxonomy::from_path(&taxonomy)?;
    println!("{} taxonomy nodes, roots {:?}", t.len(), t.root_ids());
    println!("wu_palmer(dog, cat)  = {:.4}", t.wu_palmer("dog.n.01", "cat.n.01")?);
    println!("wu_palmer(dog, fish) = {:.4}", t.wu_palmer("dog.n.01", "fish.n.01")?);

    let file = File::open(&predictions).map_err(|e| wavegate::Error::Io { path: predictions.clone(), source: e })?;
    let preds = read_predictions(BufReader::new(file), &predictions.display().to_string())?;
    let report = score_predictions(&preds, &t)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).expect("writing to memory");
    print!("\n{}", String::from_utf8_lossy(&csv));
    if let Some(s) = &report.overall {
        println!("\n{} scored, {} unresolved: {s}", s.count, report.unresolved());
    }
    Ok(())
}
