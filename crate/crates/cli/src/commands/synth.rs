//! `pulmo synth`: write a synthetic dataset.

use std::path::Path;

use pulmo_core::synth::{gen_dataset, Part, SynthConfig};

use crate::CmdResult;

pub fn run(config: &SynthConfig, out: &Path) -> CmdResult {
    let rows = gen_dataset(config, out)?;
    let train = rows.iter().filter(|r| r.part == Part::Train).count();
    let test = rows.len() - train;
    let cued = rows.iter().filter(|r| r.cue_corner.is_some()).count();
    println!(
        "synth: wrote {} samples ({} train, {} test, {} cued) under {}",
        rows.len(),
        train,
        test,
        cued,
        out.display()
    );
    println!("synth: manifest at {}", out.join("manifest.csv").display());
    Ok(())
}
