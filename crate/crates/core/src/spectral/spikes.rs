use serde::{Deserialize, Serialize};

use super::spectrum::RfSpectrum;
use crate::error::{Error, Result};

pub const DEFAULT_SPIKE_THRESHOLD_DB: f64 = 6.0;

/// Candidate line at `carrier + order·frame_rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    pub order: i32,
    pub frequency_hz: f64,
    /// Local maximum over the flanking-bin median, dB.
    pub prominence_db: f64,
    pub detected: bool,
}

/// Checks each offset `±j·frame_rate` (`j = 1..=max_order`) around the carrier
/// for a line standing out of the surrounding pedestal. The local level is the
/// largest bin within ±1 bin of the offset; the pedestal level is the median
/// of bins 3 to `frame_rate/(2·bin)` away on both sides, leaving out bins
/// within `2·RBW` of the carrier.
pub fn detect_spikes(
    s: &RfSpectrum,
    carrier_hz: f64,
    frame_rate: f64,
    max_order: u32,
    threshold_db: f64,
) -> Result<Vec<Spike>> {
    if !(s.rbw() < frame_rate / 3.0) {
        return Err(Error::Config(format!(
            "RBW {} Hz cannot resolve lines spaced {frame_rate} Hz",
            s.rbw()
        )));
    }
    let p = s.power();
    let reach = ((frame_rate / (2.0 * s.bin_hz())).floor() as usize).max(3);
    let in_carrier = |i: usize| (s.frequency(i) - carrier_hz).abs() <= 2.0 * s.rbw();
    let mut spikes = Vec::new();
    for j in 1..=max_order as i32 {
        for order in [-j, j] {
            let f = carrier_hz + order as f64 * frame_rate;
            if f < s.start_hz() || f > s.frequency(s.len().saturating_sub(1)) {
                continue;
            }
            let b = s.bin_of(f);
            let local = (b.saturating_sub(1)..=(b + 1).min(s.len() - 1))
                .map(|i| p[i])
                .fold(0.0, f64::max);
            let mut flank: Vec<f64> = (3..=reach)
                .flat_map(|m| [b.checked_sub(m), Some(b + m)])
                .flatten()
                .filter(|&i| i < s.len() && !in_carrier(i))
                .map(|i| p[i])
                .collect();
            flank.sort_by(f64::total_cmp);
            let baseline = match flank.len() {
                0 => continue,
                n if n % 2 == 1 => flank[n / 2],
                n => 0.5 * (flank[n / 2 - 1] + flank[n / 2]),
            };
            let prominence_db = if baseline > 0.0 && local > 0.0 {
                10.0 * (local / baseline).log10()
            } else if local > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            spikes.push(Spike {
                order,
                frequency_hz: f,
                prominence_db,
                detected: prominence_db > threshold_db,
            });
        }
    }
    Ok(spikes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn injected_lines_are_found() {
        let mut power = vec![1.0; 1001];
        let s0 = RfSpectrum::new(17e6, 20e3, power.clone(), 30e3, 1).unwrap();
        for f in [26.9e6, 27.3e6] {
            power[s0.bin_of(f)] = 10.0;
        }
        let s = RfSpectrum::new(17e6, 20e3, power, 30e3, 1).unwrap();
        let spikes = detect_spikes(&s, 27.1e6, 200e3, 2, DEFAULT_SPIKE_THRESHOLD_DB).unwrap();
        assert_eq!(spikes.len(), 4);
        for sp in &spikes {
            assert_eq!(sp.detected, sp.order.abs() == 1, "{sp:?}");
        }
    }

    #[test]
    fn coarse_rbw_is_rejected() {
        let s = RfSpectrum::new(0.0, 20e3, vec![1.0; 100], 100e3, 1).unwrap();
        assert!(detect_spikes(&s, 1e6, 200e3, 1, 6.0).is_err());
    }
}
