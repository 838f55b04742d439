//! Write trainer configs for an external causal and masked pretraining run.

use rephrase::eval::{export_trainer_config, TrainerKind};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    for kind in [TrainerKind::Causal, TrainerKind::Masked] {
        let path = dir.path().join(format!("trainer-{kind}.json"));
        let cfg = export_trainer_config(kind, Some("run/manifests/notes.P1.qwen2-7b.json"), &path)?;
        println!("{}:\n{}", path.display(), cfg.to_json());
    }
    Ok(())
}
