use avword::checkpoint::{load_checkpoint, save_checkpoint};
use avword::integration::{assemble_model, ModelKind, ModelSpec};

fn main() -> avword::Result<()> {
    let dir = std::env::temp_dir().join("avword-checkpoint-example");
    let spec = ModelSpec::desk(ModelKind::Audiovisual, 10);
    let model = assemble_model::<f32>(&spec, 7)?;
    save_checkpoint(&dir, &model, None, None)?;
    let back = load_checkpoint::<f32>(&dir, Some(&spec))?;
    let same = model
        .store
        .entries()
        .zip(back.model.store.entries())
        .all(|((_, a), (_, b))| a.value() == b.value());
    println!("{} tensors, {} parameters, identical: {same}", model.store.len(), model.param_count());
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
