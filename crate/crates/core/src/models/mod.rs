//! Benchmark model catalog: builders for the four reference systems and
//! the initial states used with them.

pub mod damped;
pub mod feedback;
pub mod fock;
pub mod spatial;

pub use damped::{damped_ho, thermal_state, zero_t_oracle, CoherentSuperpositionOracle};
pub use feedback::measurement_feedback;
pub use spatial::{collisional_decoherence, gaussian_packet, qbm_diffusion};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CVec;
use crate::model::OpenSystem;

/// Named, serializable parameter set for one benchmark model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ModelSpec {
    DampedHo {
        omega: f64,
        gamma: f64,
        n_th: f64,
        fock_dim: usize,
    },
    Qbm {
        gamma: f64,
        lambda_th: f64,
        /// Defaults to the benchmark mass 15/(8πγΛ_th²).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mass: Option<f64>,
        points: usize,
        extent: f64,
    },
    Colldec {
        gamma: f64,
        sigma_g: f64,
        /// Defaults to the benchmark mass 2σ_G²/γ.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mass: Option<f64>,
        points: usize,
        extent: f64,
        kicks: usize,
    },
    MeasureFb {
        d: usize,
        bases: Vec<usize>,
        gamma: f64,
        omega: f64,
        fock_dim: usize,
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<OpenSystem> {
        match self {
            ModelSpec::DampedHo { omega, gamma, n_th, fock_dim } => {
                damped_ho(*omega, *gamma, *n_th, *fock_dim)
            }
            ModelSpec::Qbm { gamma, lambda_th, mass, points, extent } => {
                qbm_diffusion(*gamma, *lambda_th, *mass, *points, *extent)
            }
            ModelSpec::Colldec { gamma, sigma_g, mass, points, extent, kicks } => {
                collisional_decoherence(*gamma, *sigma_g, *mass, *points, *extent, *kicks)
            }
            ModelSpec::MeasureFb { d, bases, gamma, omega, fock_dim } => {
                measurement_feedback(*d, bases, *gamma, *omega, *fock_dim)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::DampedHo { .. } => "damped_ho",
            ModelSpec::Qbm { .. } => "qbm",
            ModelSpec::Colldec { .. } => "colldec",
            ModelSpec::MeasureFb { .. } => "measure_fb",
        }
    }
}

/// One catalog line: model name plus its parameter schema.
pub fn catalog() -> Vec<(&'static str, &'static str)> {
    vec![
        ("damped_ho", "omega, gamma, n_th, fock_dim"),
        ("qbm", "gamma, lambda_th, [mass], points, extent"),
        ("colldec", "gamma, sigma_g, [mass], points, extent, kicks"),
        ("measure_fb", "d, bases, gamma, omega, fock_dim"),
    ]
}

fn to_c64(pair: [f64; 2]) -> C64 {
    C64::new(pair[0], pair[1])
}

/// Serializable initial-state description; complex numbers are [re, im]
/// pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialStateSpec {
    /// Superposition of number states; equal amplitudes unless given.
    FockKets {
        kets: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amplitudes: Option<Vec<[f64; 2]>>,
    },
    Coherent {
        beta: [f64; 2],
    },
    CoherentSuperposition {
        betas: Vec<[f64; 2]>,
        amplitudes: Vec<[f64; 2]>,
    },
    Gaussian {
        x0: f64,
        sigma_x: f64,
        k0: f64,
    },
}

impl InitialStateSpec {
    /// Build the normalized pure state vector in the system's basis,
    /// enforcing the truncation and grid adequacy checks.
    pub fn build(&self, sys: &OpenSystem) -> Result<CVec> {
        let dim = sys.dim();
        match self {
            InitialStateSpec::FockKets { kets, amplitudes } => {
                if kets.is_empty() {
                    return Err(Error::InvalidModel("empty ket list".into()));
                }
                let amps: Vec<C64> = match amplitudes {
                    Some(a) => {
                        if a.len() != kets.len() {
                            return Err(Error::DimensionMismatch {
                                expected: kets.len(),
                                got: a.len(),
                            });
                        }
                        a.iter().map(|&p| to_c64(p)).collect()
                    }
                    None => vec![C64::new(1.0, 0.0); kets.len()],
                };
                let mut psi = CVec::from_elem(dim, C64::new(0.0, 0.0));
                for (&n, &a) in kets.iter().zip(&amps) {
                    if n >= dim {
                        return Err(Error::IndexOutOfRange { index: n, count: dim });
                    }
                    psi[n] += a;
                }
                normalize(&mut psi)?;
                fock::check_truncation(&psi, 1e-8)?;
                Ok(psi)
            }
            InitialStateSpec::Coherent { beta } => {
                let mut psi = fock::coherent_ket(to_c64(*beta), dim);
                fock::check_truncation(&psi, 1e-8)?;
                normalize(&mut psi)?;
                Ok(psi)
            }
            InitialStateSpec::CoherentSuperposition { betas, amplitudes } => {
                if betas.len() != amplitudes.len() || betas.is_empty() {
                    return Err(Error::InvalidModel("betas and amplitudes must pair up".into()));
                }
                let mut psi = CVec::from_elem(dim, C64::new(0.0, 0.0));
                for (&b, &a) in betas.iter().zip(amplitudes) {
                    let ket = fock::coherent_ket(to_c64(b), dim);
                    fock::check_truncation(&ket, 1e-8)?;
                    psi = psi + ket * to_c64(a);
                }
                normalize(&mut psi)?;
                Ok(psi)
            }
            InitialStateSpec::Gaussian { x0, sigma_x, k0 } => {
                let info = sys.spatial().ok_or_else(|| {
                    Error::InvalidModel("gaussian packet needs a spatial model".into())
                })?;
                gaussian_packet(&info.grid, *x0, *sigma_x, *k0)
            }
        }
    }
}

fn normalize(psi: &mut CVec) -> Result<()> {
    let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return Err(Error::InvalidModel("initial state has zero norm".into()));
    }
    psi.mapv_inplace(|z| z / C64::new(norm, 0.0));
    Ok(())
}
