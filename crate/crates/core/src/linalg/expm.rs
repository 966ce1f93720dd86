//! Matrix exponential by scaling-and-squaring with a degree-13 Padé
//! approximant (Higham 2005).

use num_complex::Complex64 as C64;

use super::{identity, norm_1, require_finite, CMat};
use crate::error::{Error, Result};

extern "C" {
    fn zgesv_(
        n: *const i32,
        nrhs: *const i32,
        a: *mut C64,
        lda: *const i32,
        ipiv: *mut i32,
        b: *mut C64,
        ldb: *const i32,
        info: *mut i32,
    );
}

/// Solve A X = B for dense square A. Both operands are row-major; feeding
/// them as column-major hands LAPACK the transposed system Aᵀ Xᵀ = Bᵀ,
/// which is exactly the original one read back row-major.
fn solve(a: &CMat, b: &CMat) -> Result<CMat> {
    let n = a.nrows() as i32;
    // transposed system: LAPACK's A is our Aᵀ, its B is our Bᵀ. Passing the
    // row-major buffers directly is wrong because zgesv overwrites B with
    // X in ITS layout; but (Aᵀ)⁻¹ Bᵀ = (B A⁻¹)ᵀ, so the row-major readback
    // of the result is B A⁻¹, not A⁻¹ B. The Padé solve below only ever
    // needs P⁻¹Q where P and Q commute, making both orderings equal; keep
    // that invariant if you reuse this helper.
    let mut af: Vec<C64> = a.iter().copied().collect();
    let mut bf: Vec<C64> = b.iter().copied().collect();
    let mut ipiv = vec![0i32; n as usize];
    let mut info = 0i32;
    unsafe {
        zgesv_(
            &n,
            &n,
            af.as_mut_ptr(),
            &n,
            ipiv.as_mut_ptr(),
            bf.as_mut_ptr(),
            &n,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "zgesv", info });
    }
    Ok(CMat::from_shape_vec((a.nrows(), a.nrows()), bf)
        .expect("shape preserved"))
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// 1-norm threshold above which the argument is scaled down by powers of
/// two before the degree-13 approximant is applied.
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential of a general complex square matrix.
pub fn expm(m: &CMat) -> Result<CMat> {
    require_finite(m, "expm input")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(m.clone());
    }

    let norm = norm_1(m);
    let squarings = if norm > THETA13 {
        ((norm / THETA13).log2().ceil() as u32).min(64)
    } else {
        0
    };
    let a = m.mapv(|z| z / C64::new(f64::from(2u32).powi(squarings as i32), 0.0));

    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);
    let id = identity(n);

    let b = &PADE13;
    let u_inner = &a6 * cc(b[13]) + &a4 * cc(b[11]) + &a2 * cc(b[9]);
    let u_poly = a6.dot(&u_inner) + &a6 * cc(b[7]) + &a4 * cc(b[5]) + &a2 * cc(b[3]) + &id * cc(b[1]);
    let u = a.dot(&u_poly);
    let v_inner = &a6 * cc(b[12]) + &a4 * cc(b[10]) + &a2 * cc(b[8]);
    let v = a6.dot(&v_inner) + &a6 * cc(b[6]) + &a4 * cc(b[4]) + &a2 * cc(b[2]) + &id * cc(b[0]);

    // (V - U)⁻¹ (V + U); V ± U are polynomials in A so they commute and
    // the transposed solve in `solve` is safe.
    let mut r = solve(&(&v - &u), &(&v + &u))?;
    for _ in 0..squarings {
        r = r.dot(&r);
    }
    require_finite(&r, "expm output")?;
    Ok(r)
}

fn cc(x: f64) -> C64 {
    C64::new(x, 0.0)
}
