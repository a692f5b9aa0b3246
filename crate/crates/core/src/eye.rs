//! Eyeball spheres reconstructed from eye-socket landmark circles.
//!
//! The socket ring is fitted as a 3D circle: a total-least-squares plane,
//! then an algebraic circle fit in plane coordinates refined by one
//! Gauss-Newton step on the geometric residual. The eyeball sits behind
//! the socket along the socket normal:
//!
//! ```text
//! r_e = c1 * r_s
//! d_e = c2 * r_s
//! o_e = o_s - d_e * n
//! ```

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocketCircle {
    pub center: Vec3,
    pub radius: f64,
    /// Unit plane normal.
    pub normal: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeballFit {
    pub socket_center: Vec3,
    pub socket_radius: f64,
    pub socket_normal: Vec3,
    pub eye_center: Vec3,
    pub eye_radius: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeConstants {
    pub c1: f64,
    pub c2: f64,
}

/// Fits a circle to `points`; the normal is oriented to have a
/// non-negative dot product with `outward`.
pub fn fit_socket_circle(points: &[Vec3], outward: &Vec3) -> Result<SocketCircle> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!(
            "circle fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l_mid, l_max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if l_max <= 0.0 || l_mid <= 1e-12 * l_max {
        return Err(Error::Degenerate("points are collinear or coincident".into()));
    }
    let mut normal: Vec3 = eig.eigenvectors.column(order[0]).into_owned().normalize();
    if normal.dot(outward) < 0.0 {
        normal = -normal;
    }
    let e1: Vec3 = eig.eigenvectors.column(order[2]).into_owned().normalize();
    let e2 = normal.cross(&e1);

    let uv: Vec<(f64, f64)> = points
        .iter()
        .map(|p| {
            let d = p - centroid;
            (d.dot(&e1), d.dot(&e2))
        })
        .collect();

    // Kasa: minimize sum (u^2 + v^2 + D u + E v + F)^2
    let mut ata = Matrix3::zeros();
    let mut atb = Vec3::zeros();
    for &(u, v) in &uv {
        let row = Vec3::new(u, v, 1.0);
        ata += row * row.transpose();
        atb += row * (-(u * u + v * v));
    }
    let sol = ata
        .cholesky()
        .ok_or_else(|| Error::Degenerate("circle normal equations are singular".into()))?
        .solve(&atb);
    let (mut cu, mut cv) = (-0.5 * sol[0], -0.5 * sol[1]);
    let r2 = cu * cu + cv * cv - sol[2];
    if r2 <= 0.0 {
        return Err(Error::Degenerate("circle fit produced a non-positive radius".into()));
    }
    let mut r = r2.sqrt();

    // one Gauss-Newton step on the geometric residual |p - c| - r
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vec3::zeros();
    for &(u, v) in &uv {
        let (du, dv) = (u - cu, v - cv);
        let dist = (du * du + dv * dv).sqrt();
        if dist == 0.0 {
            continue;
        }
        let j = Vec3::new(-du / dist, -dv / dist, -1.0);
        let res = dist - r;
        jtj += j * j.transpose();
        jtr += j * res;
    }
    if let Some(ch) = jtj.cholesky() {
        let step = ch.solve(&(-jtr));
        if step.iter().all(|s| s.is_finite()) && r + step[2] > 0.0 {
            cu += step[0];
            cv += step[1];
            r += step[2];
        }
    }

    Ok(SocketCircle {
        center: centroid + e1 * cu + e2 * cv,
        radius: r,
        normal,
    })
}

pub fn reconstruct_eyeball(socket: &SocketCircle, c1: f64, c2: f64) -> Result<EyeballFit> {
    if !(socket.radius > 0.0) {
        return Err(Error::Invalid(format!("socket radius must be positive, got {}", socket.radius)));
    }
    if (socket.normal.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::Invalid(format!(
            "socket normal must be unit length, got norm {}",
            socket.normal.norm()
        )));
    }
    if !(c1 > 0.0) || !(c2 >= 0.0) {
        return Err(Error::Invalid(format!("eye constants out of range: c1={c1}, c2={c2}")));
    }
    let eye_radius = c1 * socket.radius;
    let depth = c2 * socket.radius;
    Ok(EyeballFit {
        socket_center: socket.center,
        socket_radius: socket.radius,
        socket_normal: socket.normal,
        eye_center: socket.center - socket.normal * depth,
        eye_radius,
        depth,
    })
}

/// Means of `r_e / r_s` (c1) and `d_e / r_s` (c2) over `(r_e, d_e, r_s)`.
pub fn estimate_eye_constants(fits: &[(f64, f64, f64)]) -> Result<EyeConstants> {
    if fits.is_empty() {
        return Err(Error::Invalid("no eyeball fits to estimate constants from".into()));
    }
    let (mut s1, mut s2) = (0.0, 0.0);
    for &(re, de, rs) in fits {
        if !(rs > 0.0) {
            return Err(Error::Invalid(format!("socket radius must be positive, got {rs}")));
        }
        s1 += re / rs;
        s2 += de / rs;
    }
    let n = fits.len() as f64;
    Ok(EyeConstants { c1: s1 / n, c2: s2 / n })
}
