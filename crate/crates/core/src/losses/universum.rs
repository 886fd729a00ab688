use ndarray::{Array2, ArrayView2};

/// Scaling of the Universum L1 term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UniversumNorm {
    /// Mean over samples of the per-vector L1 norm divided by the channel count.
    Mean,
    /// Raw sum of absolute values over every sample and channel.
    Literal,
}

impl UniversumNorm {
    pub fn from_literal_flag(literal: bool) -> Self {
        if literal {
            UniversumNorm::Literal
        } else {
            UniversumNorm::Mean
        }
    }

    fn scale(self, samples: ArrayView2<f64>) -> f64 {
        match self {
            UniversumNorm::Mean => 1.0 / (samples.nrows() * samples.ncols()) as f64,
            UniversumNorm::Literal => 1.0,
        }
    }
}

/// L1 feature strength of the Universum samples (one sample per row). Zero for an empty set.
pub fn universum_reg(samples: ArrayView2<f64>, norm: UniversumNorm) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|v| v.abs()).sum::<f64>() * norm.scale(samples)
}

/// Subgradient of [`universum_reg`]; zero where a coordinate is exactly zero.
pub fn universum_grad(samples: ArrayView2<f64>, norm: UniversumNorm) -> Array2<f64> {
    if samples.is_empty() {
        return Array2::zeros(samples.raw_dim());
    }
    let scale = norm.scale(samples);
    samples.mapv(|v| {
        if v > 0.0 {
            scale
        } else if v < 0.0 {
            -scale
        } else {
            0.0
        }
    })
}
