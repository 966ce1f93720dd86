//! Spatial decoherence models on a periodic 1D grid: position diffusion
//! (quantum Brownian motion limit) and collisional decoherence by
//! momentum kicks.

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, I, ZERO};
use crate::model::{Grid, OpenSystem, SpatialInfo, Structure};

/// Dense kinetic Hamiltonian p²/2m on the periodic grid, assembled from
/// its circulant first column (it is diagonal in the FFT momentum basis).
fn kinetic_dense(grid: &Grid, kinetic_k: &[f64]) -> CMat {
    let n = grid.points;
    let mut col: Vec<C64> = kinetic_k.iter().map(|&e| C64::new(e, 0.0)).collect();
    let mut planner = FftPlanner::new();
    let inv = planner.plan_fft_inverse(n);
    inv.process(&mut col);
    let scale = C64::new(1.0 / n as f64, 0.0);
    let mut h = CMat::from_elem((n, n), ZERO);
    for a in 0..n {
        for b in 0..n {
            h[[a, b]] = col[(n + a - b) % n] * scale;
        }
    }
    // clean the roundoff so the Hermiticity gate is exact
    for a in 0..n {
        h[[a, a]] = C64::new(h[[a, a]].re, 0.0);
        for b in (a + 1)..n {
            let avg = 0.5 * (h[[a, b]] + h[[b, a]].conj());
            h[[a, b]] = avg;
            h[[b, a]] = avg.conj();
        }
    }
    h
}

fn diagonal_dense(diag: &[C64]) -> CMat {
    let n = diag.len();
    let mut m = CMat::from_elem((n, n), ZERO);
    for (i, &z) in diag.iter().enumerate() {
        m[[i, i]] = z;
    }
    m
}

/// Position-diffusion master equation ∂ρ = −i[p²/2m, ρ] − D[x,[x,ρ]]
/// with D = 4πγ/Λ_th², realized with the single Hermitian jump operator
/// L = √(2D)·x. `mass` defaults to 15/(8πγΛ_th²), the ratio used by the
/// benchmark runs.
pub fn qbm_diffusion(
    gamma: f64,
    lambda_th: f64,
    mass: Option<f64>,
    grid_points: usize,
    grid_extent: f64,
) -> Result<OpenSystem> {
    if !(gamma >= 0.0) || !(lambda_th > 0.0) {
        return Err(Error::InvalidModel(format!("bad qbm rates: gamma {gamma}, lambda_th {lambda_th}")));
    }
    let grid = Grid::new(grid_points, grid_extent)?;
    let mass = mass.unwrap_or(15.0 / (8.0 * std::f64::consts::PI * gamma * lambda_th * lambda_th));
    if !(mass > 0.0) {
        return Err(Error::InvalidModel(format!("mass must be positive, got {mass}")));
    }
    let d_coeff = 4.0 * std::f64::consts::PI * gamma / (lambda_th * lambda_th);
    let kinetic: Vec<f64> = grid.momenta().iter().map(|&k| k * k / (2.0 * mass)).collect();
    let xs = grid.positions();
    let l_diag: Vec<C64> = xs.iter().map(|&x| C64::new((2.0 * d_coeff).sqrt() * x, 0.0)).collect();

    let h = kinetic_dense(&grid, &kinetic);
    let l = diagonal_dense(&l_diag);
    let info = SpatialInfo { grid, kinetic_k: kinetic, jump_diags: vec![l_diag] };
    OpenSystem::new(h, vec![l], vec!["position".into()], Structure::Spatial(info))
}

/// Collisional decoherence: momentum kicks e^{iqx} drawn from a Gaussian
/// transfer distribution of width σ_G, discretized on `n_kicks` points
/// over ±4σ_G snapped to the momentum lattice (each kick is then an exact
/// momentum translation). The kick rates are renormalized to sum to γ.
/// `mass` defaults to 2σ_G²/γ, the benchmark ratio.
pub fn collisional_decoherence(
    gamma: f64,
    sigma_g: f64,
    mass: Option<f64>,
    grid_points: usize,
    grid_extent: f64,
    n_kicks: usize,
) -> Result<OpenSystem> {
    if !(gamma > 0.0) || !(sigma_g > 0.0) {
        return Err(Error::InvalidModel(format!("bad rates: gamma {gamma}, sigma_g {sigma_g}")));
    }
    if n_kicks < 1 || n_kicks % 2 == 0 {
        return Err(Error::InvalidModel(format!("n_kicks must be odd and positive, got {n_kicks}")));
    }
    let grid = Grid::new(grid_points, grid_extent)?;
    let mass = mass.unwrap_or(2.0 * sigma_g * sigma_g / gamma);
    let dk = grid.dk();

    // snap the quadrature nodes to lattice momenta and merge collisions
    let mut lattice_weights: std::collections::BTreeMap<i64, f64> = std::collections::BTreeMap::new();
    for i in 0..n_kicks {
        let q_raw = if n_kicks == 1 {
            0.0
        } else {
            -4.0 * sigma_g + 8.0 * sigma_g * i as f64 / (n_kicks - 1) as f64
        };
        let m = (q_raw / dk).round() as i64;
        let q = m as f64 * dk;
        let g = (-0.5 * q * q / (sigma_g * sigma_g)).exp();
        *lattice_weights.entry(m).or_insert(0.0) += g;
    }
    if n_kicks > 1 && lattice_weights.len() < 3 {
        return Err(Error::IncommensurateKick {
            reason: format!(
                "sigma_g {sigma_g} maps onto only {} lattice momenta (dk = {dk:.3e}); enlarge the grid extent",
                lattice_weights.len()
            ),
        });
    }
    let total: f64 = lattice_weights.values().sum();

    let xs = grid.positions();
    let mut jump_diags = Vec::new();
    let mut jump_ops = Vec::new();
    let mut labels = Vec::new();
    for (&m, &w) in &lattice_weights {
        let rate = gamma * w / total;
        let amp = rate.sqrt();
        let q = m as f64 * dk;
        let diag: Vec<C64> =
            xs.iter().map(|&x| C64::new(amp, 0.0) * (I * (q * x)).exp()).collect();
        jump_ops.push(diagonal_dense(&diag));
        jump_diags.push(diag);
        labels.push(format!("kick_{m}"));
    }
    let kinetic: Vec<f64> = grid.momenta().iter().map(|&k| k * k / (2.0 * mass)).collect();
    let h = kinetic_dense(&grid, &kinetic);
    let info = SpatialInfo { grid, kinetic_k: kinetic, jump_diags };
    OpenSystem::new(h, jump_ops, labels, Structure::Spatial(info))
}

/// Normalized Gaussian wave packet exp(−(x−x₀)²/4σ_x² + ik₀x) on the
/// grid. Rejects carrier momenta beyond half the Nyquist bound and
/// packets whose tails touch the grid edge.
pub fn gaussian_packet(grid: &Grid, x0: f64, sigma_x: f64, k0: f64) -> Result<CVec> {
    if !(sigma_x > 0.0) {
        return Err(Error::InvalidModel(format!("sigma_x must be positive, got {sigma_x}")));
    }
    let k_nyquist = std::f64::consts::PI / grid.dx();
    if k0.abs() > 0.5 * k_nyquist {
        return Err(Error::GridTooCoarse {
            reason: format!("carrier k0 {k0} exceeds half the Nyquist momentum {k_nyquist:.3}"),
        });
    }
    let xs = grid.positions();
    let psi: Vec<C64> = xs
        .iter()
        .map(|&x| {
            let envelope = (-(x - x0) * (x - x0) / (4.0 * sigma_x * sigma_x)).exp();
            C64::new(envelope, 0.0) * (I * (k0 * x)).exp()
        })
        .collect();
    let edge = psi[0].norm().max(psi[grid.points - 1].norm());
    let peak = psi.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    if edge > 1e-3 * peak {
        return Err(Error::GridTooCoarse {
            reason: format!("packet tails reach the grid edge (relative amplitude {:.3e})", edge / peak),
        });
    }
    let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    Ok(CVec::from_vec(psi.into_iter().map(|z| z / C64::new(norm, 0.0)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{approx_eq, c, trace};
    use crate::model::{apply_generator, optimal_shift};
    use crate::models::fock::outer;

    #[test]
    fn qbm_generator_matches_double_commutator() {
        let sys = qbm_diffusion(1.0, 1.0, None, 32, 12.0).unwrap();
        let grid = Grid::new(32, 12.0).unwrap();
        let psi = gaussian_packet(&grid, 0.3, 1.0, 0.5).unwrap();
        let rho = outer(&psi);

        let out = apply_generator(&sys, &rho).unwrap();

        // direct form −i[H,ρ] − D[x,[x,ρ]]
        let h = sys.hamiltonian();
        let xs = grid.positions();
        let d_coeff = 4.0 * std::f64::consts::PI;
        let mut direct = (h.dot(&rho) - rho.dot(h)) * (-I);
        let n = grid.points;
        for a in 0..n {
            for b in 0..n {
                let dx = xs[a] - xs[b];
                direct[[a, b]] -= C64::new(d_coeff * dx * dx, 0.0) * rho[[a, b]];
            }
        }
        assert!(approx_eq(&out, &direct, 1e-10));
    }

    #[test]
    fn qbm_optimal_shift_vanishes_on_symmetric_state() {
        let sys = qbm_diffusion(1.0, 1.0, None, 32, 12.0).unwrap();
        let grid = Grid::new(32, 12.0).unwrap();
        let psi = gaussian_packet(&grid, 0.0, 1.0, 0.0).unwrap();
        let rho = outer(&psi);
        // L is Hermitian, traceless on the symmetric grid
        assert!(sys.trace_l(0).norm() < 1e-10);
        assert!(optimal_shift(&sys, 0, &rho).unwrap().norm() < 1e-10);
    }

    #[test]
    fn colldec_rates_sum_to_gamma_and_kicks_are_unitary() {
        let gamma = 1.0;
        let sys = collisional_decoherence(gamma, 1.0, None, 64, 30.0, 21).unwrap();
        let mut total = 0.0;
        for j in 0..sys.num_jumps() {
            let l = &sys.jump_ops()[j];
            // L†L must be rate·𝟙 exactly
            let gamma_op = crate::linalg::dagger(l).dot(l);
            let rate = gamma_op[[0, 0]].re;
            for i in 0..sys.dim() {
                assert!((gamma_op[[i, i]].re - rate).abs() < 1e-14);
            }
            total += rate;
        }
        assert!((total - gamma).abs() < 1e-6 * gamma);
    }

    #[test]
    fn colldec_kicks_translate_momentum_exactly() {
        let sys = collisional_decoherence(1.0, 1.0, None, 64, 30.0, 5).unwrap();
        let info = sys.spatial().unwrap();
        let grid = &info.grid;
        // plane wave at momentum index 3
        let n = grid.points;
        let mut psi = CVec::from_elem(n, ZERO);
        let xs = grid.positions();
        for a in 0..n {
            psi[a] = (I * (3.0 * grid.dk() * xs[a])).exp() / c((n as f64).sqrt(), 0.0);
        }
        // applying any kick gives another plane wave: |⟨x|Lψ⟩| uniform
        let l = &sys.jump_ops()[sys.num_jumps() - 1];
        let kicked = l.dot(&psi);
        let mags: Vec<f64> = kicked.iter().map(|z| z.norm()).collect();
        for m in &mags {
            assert!((m - mags[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn colldec_spatial_coherence_decay_closed_form() {
        // H → 0 limit: ρ(x,x′) decays at rate γ(1 − Ĝ(x−x′)) where Ĝ is
        // the characteristic function of the discrete kick distribution.
        let gamma = 1.0;
        let sys = collisional_decoherence(gamma, 1.0, Some(1e12), 64, 30.0, 21).unwrap();
        let info = sys.spatial().unwrap();
        let grid = info.grid.clone();
        let psi = gaussian_packet(&grid, 0.0, 2.0, 0.0).unwrap();
        let rho0 = outer(&psi);
        let t = 0.5;
        let res = crate::propagator::propagate(&sys, &rho0, t, 0.005, 100).unwrap();
        let rho = res.final_state();
        let xs = grid.positions();
        let (a, b) = (20, 44);
        // characteristic function of the discrete kicks
        let mut ghat = C64::new(0.0, 0.0);
        for j in 0..sys.num_jumps() {
            let diag = &info.jump_diags[j];
            // diag[x] = √rate·e^{iqx}; recover rate and phase at x_a − x_b
            let rate = diag[0].norm_sqr();
            let phase = diag[a] / diag[b]; // e^{iq(x_a − x_b)}
            ghat += C64::new(rate, 0.0) * phase;
        }
        let decay = ((ghat - C64::new(gamma, 0.0)) * C64::new(t, 0.0)).exp();
        let want = rho0[[a, b]] * decay;
        assert!((rho[[a, b]] - want).norm() < 1e-8 * rho0[[a, b]].norm().max(1e-12),
            "got {:?} want {:?}", rho[[a, b]], want);
    }

    #[test]
    fn incommensurate_kicks_rejected() {
        // tiny sigma_g on a short grid: all nodes snap to q = 0
        assert!(matches!(
            collisional_decoherence(1.0, 0.01, None, 64, 10.0, 21),
            Err(Error::IncommensurateKick { .. })
        ));
    }

    #[test]
    fn packet_validation() {
        let grid = Grid::new(64, 20.0).unwrap();
        let psi = gaussian_packet(&grid, 0.0, 1.5, 1.0).unwrap();
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        let rho = outer(&psi);
        assert!((trace(&rho).re - 1.0).abs() < 1e-12);
        // carrier beyond half Nyquist rejected
        let k_ny = std::f64::consts::PI / grid.dx();
        assert!(gaussian_packet(&grid, 0.0, 1.5, 0.6 * k_ny).is_err());
        // packet spilling over the edge rejected
        assert!(gaussian_packet(&grid, 8.0, 4.0, 0.0).is_err());
    }
}
