//! Simulated physical channel: per-frame power normalization, complex AWGN
//! parameterized by SNR, and flat fading with perfect-CSI equalization.
//!
//! Symbols travel as `[B, n_sym, 2]` tensors of (re, im) pairs, so every
//! step stays differentiable with respect to the transmitted frame. Noise is
//! a constant of the graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use pcsc_tensor::{Graph, Scalar, Var};

use crate::error::{Error, Result};

/// Complex symbols of a batch of frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolFrame {
    /// `[B, n_sym, 2]`.
    pub symbols: Var,
    pub batch: usize,
    pub n_sym: usize,
    /// Mean `|x|^2` per frame when known, set by [`normalize_power`].
    pub declared_power: Option<f64>,
}

impl SymbolFrame {
    pub fn new<T: Scalar>(g: &Graph<T>, symbols: Var) -> Result<Self> {
        match g.shape(symbols)[..] {
            [batch, n_sym, 2] => Ok(SymbolFrame {
                symbols,
                batch,
                n_sym,
                declared_power: None,
            }),
            ref s => Err(Error::Argument(format!("symbol frame must be [B, n_sym, 2], got {s:?}"))),
        }
    }

    /// Mean `|x|^2` of each frame, measured.
    pub fn measured_power<T: Scalar>(&self, g: &Graph<T>) -> Vec<f64> {
        let v = g.value(self.symbols);
        v.chunks(2 * self.n_sym)
            .map(|f| f.iter().map(|&x| Scalar::to_f64(x) * Scalar::to_f64(x)).sum::<f64>() / self.n_sym as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Awgn,
    FlatFading,
}

/// One channel realization: kind, SNR (`+inf` is the noiseless sentinel),
/// fading coefficient and noise seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSpec {
    pub kind: ChannelKind,
    pub snr_db: f64,
    pub h_re: f64,
    pub h_im: f64,
    pub seed: u64,
    /// Reject frames whose measured power is not unit.
    pub strict: bool,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        ChannelSpec {
            kind: ChannelKind::Awgn,
            snr_db: f64::INFINITY,
            h_re: 1.0,
            h_im: 0.0,
            seed: 0,
            strict: true,
        }
    }
}

impl ChannelSpec {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn awgn(snr_db: f64, seed: u64) -> Self {
        ChannelSpec {
            snr_db,
            seed,
            ..Self::default()
        }
    }

    pub fn flat_fading(snr_db: f64, h_re: f64, h_im: f64, seed: u64) -> Self {
        ChannelSpec {
            kind: ChannelKind::FlatFading,
            snr_db,
            h_re,
            h_im,
            seed,
            strict: true,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.snr_db == f64::INFINITY
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::Config(format!("snr_db must be finite or +inf, got {}", self.snr_db)));
        }
        if self.kind == ChannelKind::FlatFading {
            let m = self.h_re * self.h_re + self.h_im * self.h_im;
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Config("flat fading needs a finite non-zero coefficient".into()));
            }
        }
        Ok(())
    }
}

/// Total complex noise variance for unit signal power; each real component
/// carries half of it.
pub fn snr_to_sigma2(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}

/// Scales each frame to unit mean symbol power.
pub fn normalize_power<T: Scalar>(g: &Graph<T>, frame: &SymbolFrame) -> Result<SymbolFrame> {
    if frame.measured_power(g).iter().any(|&p| p == 0.0) {
        return Err(Error::Degenerate("all-zero frame has no defined power".into()));
    }
    Ok(SymbolFrame {
        symbols: g.normalize_power(frame.symbols)?,
        declared_power: Some(1.0),
        ..*frame
    })
}

/// `2 * n_sym` noise components for one frame: independent normals of
/// variance `sigma2 / 2` from stream `stream` of the spec's seed.
pub fn noise_components(spec: &ChannelSpec, stream: u64, n_sym: usize) -> Vec<f64> {
    let sigma2 = snr_to_sigma2(spec.snr_db);
    let std = (sigma2 / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    (0..2 * n_sym)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            std * z
        })
        .collect()
}

/// Passes frames through the channel. Frame `b` draws its noise from stream
/// `streams[b]`, so results do not depend on batching or scheduling.
pub fn transmit<T: Scalar>(
    g: &Graph<T>,
    frame: &SymbolFrame,
    spec: &ChannelSpec,
    streams: &[u64],
) -> Result<SymbolFrame> {
    spec.validate()?;
    if streams.len() != frame.batch {
        return Err(Error::Argument(format!(
            "{} noise streams for {} frames",
            streams.len(),
            frame.batch
        )));
    }
    if spec.strict {
        let tol = if T::BYTES == 4 { 1e-4 } else { 1e-9 };
        if frame.declared_power != Some(1.0)
            || frame.measured_power(g).iter().any(|p| (p - 1.0).abs() > tol)
        {
            return Err(Error::Contract(
                "transmit expects power-normalized frames in strict mode".into(),
            ));
        }
    }
    let faded = match spec.kind {
        ChannelKind::Awgn => frame.symbols,
        ChannelKind::FlatFading => {
            g.complex_scale(frame.symbols, T::from_f64(spec.h_re), T::from_f64(spec.h_im))?
        }
    };
    let received = if spec.is_noiseless() {
        faded
    } else {
        let noise: Vec<T> = streams
            .iter()
            .flat_map(|&s| noise_components(spec, s, frame.n_sym))
            .map(T::from_f64)
            .collect();
        let w = g.constant(noise, &[frame.batch, frame.n_sym, 2])?;
        g.add(faded, w)?
    };
    let equalized = match spec.kind {
        ChannelKind::Awgn => received,
        ChannelKind::FlatFading => {
            let m = spec.h_re * spec.h_re + spec.h_im * spec.h_im;
            g.complex_scale(received, T::from_f64(spec.h_re / m), T::from_f64(-spec.h_im / m))?
        }
    };
    Ok(SymbolFrame {
        symbols: equalized,
        declared_power: None,
        ..*frame
    })
}

/// One training SNR, uniform on [0, 20] dB.
pub fn sample_training_snr<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(0.0..=20.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(g: &Graph<f64>, data: Vec<f64>, b: usize) -> SymbolFrame {
        let n = data.len() / (2 * b);
        SymbolFrame::new(g, g.param(data, &[b, n, 2]).unwrap()).unwrap()
    }

    #[test]
    fn sigma2_values() {
        assert_eq!(snr_to_sigma2(0.0), 1.0);
        assert!((snr_to_sigma2(20.0) - 0.01).abs() < 1e-15);
        assert!((snr_to_sigma2(10.0) - 0.1).abs() < 1e-15);
        assert_eq!(snr_to_sigma2(f64::INFINITY), 0.0);
    }

    #[test]
    fn unit_frame_is_unchanged_by_normalization() {
        let g = Graph::<f64>::new();
        let f = frame(&g, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0], 1);
        let n = normalize_power(&g, &f).unwrap();
        assert_eq!(g.to_vec(n.symbols), g.to_vec(f.symbols));
    }

    #[test]
    fn zero_frame_is_degenerate() {
        let g = Graph::<f64>::new();
        let f = frame(&g, vec![0.0; 4], 1);
        assert!(matches!(normalize_power(&g, &f), Err(Error::Degenerate(_))));
    }

    #[test]
    fn strict_mode_rejects_raw_frames() {
        let g = Graph::<f64>::new();
        let f = frame(&g, vec![3.0, 0.0], 1);
        let err = transmit(&g, &f, &ChannelSpec::awgn(10.0, 1), &[0]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let lax = ChannelSpec {
            strict: false,
            ..ChannelSpec::awgn(10.0, 1)
        };
        assert!(transmit(&g, &f, &lax, &[0]).is_ok());
    }

    #[test]
    fn noiseless_is_identity_and_fading_is_inverted() {
        let g = Graph::<f64>::new();
        let f = normalize_power(&g, &frame(&g, vec![0.3, -1.2, 0.7, 0.1, -0.4, 0.9, 1.1, 0.2], 2)).unwrap();
        let y = transmit(&g, &f, &ChannelSpec::noiseless(), &[0, 1]).unwrap();
        assert_eq!(g.to_vec(y.symbols), g.to_vec(f.symbols));
        let spec = ChannelSpec::flat_fading(f64::INFINITY, 0.6, 0.8, 3);
        let y = transmit(&g, &f, &spec, &[0, 1]).unwrap();
        for (a, b) in g.to_vec(y.symbols).iter().zip(g.to_vec(f.symbols)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_fading_coefficient_is_rejected() {
        assert!(ChannelSpec::flat_fading(10.0, 0.0, 0.0, 0).validate().is_err());
        assert!(ChannelSpec::awgn(f64::NAN, 0).validate().is_err());
    }
}
