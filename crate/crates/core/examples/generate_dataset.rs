// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sample trials, render them as prompts, and round-trip the JSONL format.

use cddm_lab::task::{correct_choice, generate_dataset, parse_prompt, read_jsonl};

fn main() -> cddm_lab::Result<()> {
    let ds = generate_dataset(2000, 0.9, 2024)?;
    for t in ds.trials.iter().take(3) {
        println!("{}  ->  {}", t.prompt, t.answer.as_str());
        let (context, evidence) = parse_prompt(&t.prompt)?;
        assert_eq!(context, t.trial.context);
        assert_eq!(evidence, t.evidence);
        assert_eq!(correct_choice(&t.trial)?, t.answer);
    }

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("eval.jsonl");
    ds.write_jsonl(&path)?;
    let back = read_jsonl(&path)?;
    assert_eq!(back.to_jsonl(), ds.to_jsonl());
    println!("{} records, fingerprint {:08x}", back.len(), back.fingerprint());
    Ok(())
}
