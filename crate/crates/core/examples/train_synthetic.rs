//! Trains on freshly generated synthetic data and prints the history.
//!
//! `cargo run --release -p hvp-core --example train_synthetic -- [epochs] [lr]`

use hvp_core::features::{generate_splits, SyntheticConfig};
use hvp_core::training::{train_with, TrainConfig};

fn main() -> hvp_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(30, |s| s.parse().expect("epochs must be an integer"));
    let mut cfg = TrainConfig { epochs, ..TrainConfig::default() };
    if let Some(lr) = args.next() {
        cfg.lr = lr.parse().expect("lr must be a number");
    }
    let [train, val, _] = generate_splits(&SyntheticConfig::default(), 64, 0)?;
    let start = std::time::Instant::now();
    train_with(&train, &val, &cfg, |r| {
        println!(
            "epoch {:>2}  loss {:>8}  t2v {:.3}  v2t {:.3}  {:.1}s",
            r.epoch,
            r.train_loss.map_or("-".into(), |l| format!("{l:.4}")),
            r.val_t2v_r1.unwrap_or(0.0),
            r.val_v2t_r1.unwrap_or(0.0),
            start.elapsed().as_secs_f64()
        );
        true
    })?;
    Ok(())
}
