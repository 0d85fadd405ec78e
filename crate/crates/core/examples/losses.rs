//! BCE, soft Dice, and the combined objective with its analytic gradient.

use mammoseg::losses::{bce_loss, combined_loss, dice_loss, LossConfig, Reduction};

fn main() -> mammoseg::Result<()> {
    let g = [1u8, 1, 1, 1];
    println!("bce(p=0.5, g=1)            = {:.6}", bce_loss(&[0.5f64], &[1u8], Reduction::Mean)?);
    println!("dice(p=0.5 x4, g=1 x4)     = {:.6}", dice_loss(&[0.5f64; 4], &g, 1e-6)?);
    println!("dice(empty, empty)         = {:.6}", dice_loss(&[0.0f64; 4], &[0u8; 4], 1.0)?);

    let cfg = LossConfig {
        epsilon: 1e-6,
        ..LossConfig::default()
    };
    let out = combined_loss(&[0.0f64; 4], &g, &cfg)?;
    println!("combined(z=0 x4, g=1 x4)   = {:.6} (bce {:.6} + dice {:.6})", out.value, out.bce, out.dice);

    // central differences against the analytic gradient
    let z = [0.3f64, -1.2, 2.0, 0.1, -0.4, 1.5];
    let t = [1u8, 0, 1, 1, 0, 0];
    let cfg = LossConfig::default();
    let analytic = combined_loss(&z, &t, &cfg)?.grad;
    let h = 1e-6;
    for i in 0..z.len() {
        let (mut zp, mut zm) = (z, z);
        zp[i] += h;
        zm[i] -= h;
        let fd = (combined_loss(&zp, &t, &cfg)?.value - combined_loss(&zm, &t, &cfg)?.value) / (2.0 * h);
        println!("dL/dz[{i}]  analytic {:+.8}  numeric {:+.8}", analytic[i], fd);
    }
    Ok(())
}
