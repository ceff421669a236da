// SPDX-License-Identifier: MIT OR Apache-2.0

//! Logistic probes of context, coherence signs and choice at every prompt
//! token, with shuffled-label baselines.
//!
//! `cargo run --release --example hidden_state_probes -- [checkpoint]`

mod support;

use cddm_lab::interp::{collect_hidden_states, probe_variable, FitOptions, Unit, Variable};
use cddm_lab::task::generate_dataset;
use cddm_lab::tokenizer::Vocab;

fn main() -> cddm_lab::Result<()> {
    let vocab = Vocab::standard();
    let model = support::model_from_args(&vocab);
    let data = generate_dataset(600, 0.7, 9001)?;
    let layer = model.config().n_layers - 1;
    let acts = collect_hidden_states(&model, &data, &vocab, layer)?;
    let key = data.fingerprint() as u64;
    let opts = FitOptions::default();

    println!("token  {}", Variable::ALL.map(|v| format!("{:>8}", v.name())).join(""));
    for m in acts.iter().step_by(4).chain(acts.last()) {
        let row: Vec<String> = Variable::ALL
            .iter()
            .map(|&v| probe_variable(m, v, Unit::Population, key, &opts).map(|r| format!("{:>8.3}", r.scores.mean)))
            .collect::<cddm_lab::Result<_>>()?;
        println!("{:>5}  {}", m.token, row.join(""));
    }

    let last = acts.last().expect("prompt tokens");
    let unit = probe_variable(last, Variable::Choice, Unit::Index(0), key, &opts)?;
    println!(
        "unit 0 alone decodes choice at {:.3} (shuffled {:.3})",
        unit.scores.mean, unit.baseline.mean
    );
    Ok(())
}
