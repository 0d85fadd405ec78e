//! Parameter and FLOP accounting for the seven architectures at 1x1024x1024.

use mammoseg::model::{build_model, estimate_flops, ModelKind, ModelSpec};

fn main() -> mammoseg::Result<()> {
    println!("{:<24} {:>12} {:>14}", "model", "params (M)", "FLOPs (G)");
    for kind in ModelKind::ALL {
        let model = build_model(&ModelSpec::random_init(kind), 0)?;
        let r = estimate_flops(&model, (1, 1024, 1024))?;
        println!(
            "{:<24} {:>12.3} {:>14.2}",
            r.name,
            r.params_total as f64 / 1e6,
            r.flops_total as f64 / 1e9
        );
    }
    Ok(())
}
