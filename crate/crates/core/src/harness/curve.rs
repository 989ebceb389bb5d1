//! Per-epoch validation BER of a training run.

use std::io::Write;

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::nn::{train, EpochStats, Model, ModelKind, TrainConfig, TrainOutcome};

pub const CURVE_CSV_HEADER: &str = "epoch,val_ber";

pub fn training_curve(kind: ModelKind, params: &ChannelParams, config: &TrainConfig) -> Result<TrainOutcome<Model>> {
    train(kind, params, config)
}

pub fn write_curve_csv<W: Write>(w: W, curve: &[EpochStats]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(CURVE_CSV_HEADER.split(','))?;
    for s in curve {
        out.write_record([s.epoch.to_string(), s.val_ber.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_curve_csv<R: std::io::Read>(r: R) -> Result<Vec<(usize, f64)>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != CURVE_CSV_HEADER.split(',').collect::<Vec<_>>() {
        return Err(Error::DatasetFormat(format!("unexpected curve header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let parse = |i: usize| rec.get(i).unwrap_or("").to_string();
        let epoch = parse(0)
            .parse()
            .map_err(|_| Error::DatasetFormat(format!("bad epoch `{}`", parse(0))))?;
        let ber = parse(1)
            .parse()
            .map_err(|_| Error::DatasetFormat(format!("bad val_ber `{}`", parse(1))))?;
        rows.push((epoch, ber));
    }
    Ok(rows)
}

/// Converged level of a curve: the median of its last `tail` values.
pub fn converged_level(curve: &[EpochStats], tail: usize) -> Option<f64> {
    let start = curve.len().saturating_sub(tail.max(1));
    let mut last: Vec<f64> = curve[start..].iter().map(|s| s.val_ber).collect();
    if last.is_empty() {
        return None;
    }
    last.sort_by(f64::total_cmp);
    let m = last.len();
    Some(if m % 2 == 1 { last[m / 2] } else { 0.5 * (last[m / 2 - 1] + last[m / 2]) })
}

/// First epoch at which the curve enters the band `(1 + frac)` times its
/// converged level (median of the last three epochs). Validation BER
/// fluctuates near convergence, so entry is counted from above rather than
/// requiring the curve to stay inside.
pub fn epochs_to_band(curve: &[EpochStats], frac: f64) -> Option<usize> {
    let level = converged_level(curve, 3)?;
    epochs_to_target(curve, (1.0 + frac) * level)
}

/// First epoch whose value is at or below `target`.
pub fn epochs_to_target(curve: &[EpochStats], target: f64) -> Option<usize> {
    curve.iter().find(|s| s.val_ber <= target).map(|s| s.epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::NoiseModel;

    fn stats(v: &[f64]) -> Vec<EpochStats> {
        v.iter()
            .enumerate()
            .map(|(i, &val_ber)| EpochStats {
                epoch: i + 1,
                train_loss: 0.0,
                val_ber,
            })
            .collect()
    }

    #[test]
    fn band_entry() {
        assert_eq!(epochs_to_band(&stats(&[0.5, 0.1, 0.011, 0.0105, 0.01]), 0.1), Some(3));
        // A lucky last epoch does not move the level.
        assert_eq!(epochs_to_band(&stats(&[0.5, 0.1, 0.0108, 0.0102, 0.011, 0.001]), 0.1), Some(3));
        assert_eq!(epochs_to_band(&stats(&[0.3]), 0.1), Some(1));
        assert_eq!(converged_level(&stats(&[9.0, 1.0, 3.0, 2.0]), 3), Some(2.0));
        assert_eq!(converged_level(&stats(&[1.0, 3.0]), 3), Some(2.0));
        assert_eq!(epochs_to_band(&[], 0.1), None);
        assert_eq!(epochs_to_target(&stats(&[0.5, 0.1, 0.01]), 0.1), Some(2));
        assert_eq!(epochs_to_target(&stats(&[0.5]), 0.1), None);
    }

    #[test]
    fn curve_is_reproducible_and_serializes() {
        let p = ChannelParams::stt_mram(0.1, 0.0, 0.0, NoiseModel::Gaussian).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            train_blocks: 40,
            validation_blocks: 20,
            block_len: 8,
            hidden: 4,
            ..TrainConfig::desk_scale(ModelKind::Rnn)
        };
        let a = training_curve(ModelKind::Rnn, &p, &cfg).unwrap();
        let b = training_curve(ModelKind::Rnn, &p, &cfg).unwrap();
        assert_eq!(a.curve, b.curve);
        assert!((a.initial_val_ber - 0.5).abs() < 0.2);
        assert!(a.curve.iter().all(|s| s.val_ber.is_finite()));

        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &a.curve).unwrap();
        let back = read_curve_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].0, 2);
        assert_eq!(back[1].1, a.curve[1].val_ber);
        assert!(read_curve_csv("epoch,ber\n1,0.1\n".as_bytes()).is_err());
    }
}
