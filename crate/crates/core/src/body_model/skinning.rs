//! Shape blendshapes, forward kinematics and linear blend skinning, with a
//! hand-derived reverse pass used by the training losses.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};

use super::{
    axis_angle_with_jacobian, decode_global_rotation, euler_xyz_jacobian, euler_xyz_to_matrix,
    BodyMesh, BodyTemplate, Gender, SmplParams, TemplateSet, N_BETAS, N_JOINTS, PARAM_DIM,
    ROT_U_OFFSET, ROT_V_OFFSET, THETA_OFFSET, TRANSL_OFFSET,
};
use crate::{Error, Result};

type V3 = Vector3<f64>;
type M3 = Matrix3<f64>;

fn v3(p: &[f64; 3]) -> V3 {
    V3::new(p[0], p[1], p[2])
}

fn arr(v: &V3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Intermediate quantities of one forward evaluation, kept for the reverse
/// pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<'a> {
    template: &'a BodyTemplate,
    params: SmplParams,
    shaped: Vec<V3>,
    rest_joints: [V3; N_JOINTS],
    local_jac: [[M3; 3]; N_JOINTS],
    local_rot: [M3; N_JOINTS],
    global_rot: [M3; N_JOINTS],
}

/// Poses the template for `gender` with `params`.
pub fn forward(params: &SmplParams, gender: Gender, templates: &TemplateSet) -> Result<BodyMesh> {
    forward_traced(params, templates.get(gender)).map(|(mesh, _)| mesh)
}

/// Like [`forward`] on an explicit template, also returning the trace needed
/// for [`ForwardTrace::backward`].
pub fn forward_traced<'a>(
    params: &SmplParams,
    template: &'a BodyTemplate,
) -> Result<(BodyMesh, ForwardTrace<'a>)> {
    let n = template.n_vertices();
    let phi = decode_global_rotation(params.rot_u, params.rot_v)?;

    let mut shaped = Vec::with_capacity(n);
    for (i, rest) in template.rest_vertices.iter().enumerate() {
        let mut p = v3(rest);
        for a in 0..3 {
            let dirs = &template.shape_dirs[(i * 3 + a) * N_BETAS..(i * 3 + a + 1) * N_BETAS];
            p[a] += dirs.iter().zip(&params.beta).map(|(d, b)| d * b).sum::<f64>();
        }
        shaped.push(p);
    }
    let shaped_arr: Vec<[f64; 3]> = shaped.iter().map(arr).collect();
    let rest_joints = template.regress_joints(&shaped_arr).map(|j| v3(&j));

    let mut local_rot = [M3::identity(); N_JOINTS];
    let mut local_jac = [[M3::zeros(); 3]; N_JOINTS];
    local_rot[0] = euler_xyz_to_matrix(phi);
    local_jac[0] = euler_xyz_jacobian(phi);
    for k in 1..N_JOINTS {
        let (r, jac) = axis_angle_with_jacobian(params.theta[k - 1]);
        local_rot[k] = r;
        local_jac[k] = jac;
    }

    let mut global_rot = [M3::identity(); N_JOINTS];
    let mut posed_joints = [V3::zeros(); N_JOINTS];
    global_rot[0] = local_rot[0];
    posed_joints[0] = rest_joints[0];
    for k in 1..N_JOINTS {
        let p = template.kinematic_parents[k] as usize;
        global_rot[k] = global_rot[p] * local_rot[k];
        posed_joints[k] = posed_joints[p] + global_rot[p] * (rest_joints[k] - rest_joints[p]);
    }

    let transl = v3(&params.transl);
    let offsets: [V3; N_JOINTS] =
        core::array::from_fn(|k| posed_joints[k] - global_rot[k] * rest_joints[k]);
    let mut vertices = Vec::with_capacity(n);
    for (i, v) in shaped.iter().enumerate() {
        let mut blend = M3::zeros();
        let mut shift = V3::zeros();
        for k in 0..N_JOINTS {
            let w = template.skin_weight(i, k);
            if w != 0.0 {
                blend += global_rot[k] * w;
                shift += offsets[k] * w;
            }
        }
        vertices.push(arr(&(blend * v + shift + transl)));
    }
    let joints = core::array::from_fn(|k| arr(&(posed_joints[k] + transl)));

    let trace = ForwardTrace {
        template,
        params: *params,
        shaped,
        rest_joints,
        local_jac,
        local_rot,
        global_rot,
    };
    Ok((BodyMesh { vertices, joints }, trace))
}

impl ForwardTrace<'_> {
    /// Pulls gradients on the posed joints and vertices back to the packed
    /// parameter vector.
    pub fn backward(&self, d_joints: &[[f64; 3]; N_JOINTS], d_vertices: &[[f64; 3]]) -> Result<[f64; PARAM_DIM]> {
        let t = self.template;
        let n = t.n_vertices();
        if d_vertices.len() != n {
            return Err(Error::shape("vertex gradient", n, d_vertices.len()));
        }
        let mut grad = [0.0; PARAM_DIM];

        let mut d_transl = V3::zeros();
        let mut d_posed: [V3; N_JOINTS] = core::array::from_fn(|k| v3(&d_joints[k]));
        for d in &d_posed {
            d_transl += d;
        }

        // skinning: p_i = sum_k w_ik (Rg_k (v_i - J_k) + Jp_k) + s
        let mut weighted = [V3::zeros(); N_JOINTS];
        let mut outer = [M3::zeros(); N_JOINTS];
        let mut d_shaped = Vec::with_capacity(n);
        for i in 0..n {
            let dp = v3(&d_vertices[i]);
            d_transl += dp;
            let v = self.shaped[i];
            let mut back = M3::zeros();
            for k in 0..N_JOINTS {
                let w = t.skin_weight(i, k);
                if w != 0.0 {
                    let wdp = dp * w;
                    weighted[k] += wdp;
                    outer[k] += wdp * v.transpose();
                    back += self.global_rot[k].transpose() * w;
                }
            }
            d_shaped.push(back * dp);
        }
        let mut d_global = [M3::zeros(); N_JOINTS];
        let mut d_rest_joints = [V3::zeros(); N_JOINTS];
        for k in 0..N_JOINTS {
            d_global[k] = outer[k] - weighted[k] * self.rest_joints[k].transpose();
            d_posed[k] += weighted[k];
            d_rest_joints[k] -= self.global_rot[k].transpose() * weighted[k];
        }

        // forward kinematics, children before parents
        let mut d_local = [M3::zeros(); N_JOINTS];
        for k in (1..N_JOINTS).rev() {
            let p = t.kinematic_parents[k] as usize;
            let rg_p = self.global_rot[p];
            let bone = self.rest_joints[k] - self.rest_joints[p];
            let dg = d_global[k];
            d_global[p] += dg * self.local_rot[k].transpose() + d_posed[k] * bone.transpose();
            d_local[k] = rg_p.transpose() * dg;
            let back = rg_p.transpose() * d_posed[k];
            d_rest_joints[k] += back;
            d_rest_joints[p] -= back;
            let dpk = d_posed[k];
            d_posed[p] += dpk;
        }
        d_local[0] = d_global[0];
        d_rest_joints[0] += d_posed[0];

        for k in 1..N_JOINTS {
            for j in 0..3 {
                grad[THETA_OFFSET + 3 * (k - 1) + j] = d_local[k].dot(&self.local_jac[k][j]);
            }
        }
        for axis in 0..3 {
            let d_phi = d_local[0].dot(&self.local_jac[0][axis]);
            let (u, v) = (self.params.rot_u[axis], self.params.rot_v[axis]);
            let r2 = (u * u + v * v).max(1e-300);
            grad[ROT_U_OFFSET + axis] = d_phi * v / r2;
            grad[ROT_V_OFFSET + axis] = -d_phi * u / r2;
        }
        for a in 0..3 {
            grad[TRANSL_OFFSET + a] = d_transl[a];
        }

        // joint regression and shape blendshapes
        for (j, dj) in d_rest_joints.iter().enumerate() {
            let row = &t.joint_regressor[j * n..(j + 1) * n];
            for (i, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    d_shaped[i] += dj * w;
                }
            }
        }
        for (i, ds) in d_shaped.iter().enumerate() {
            for a in 0..3 {
                if ds[a] == 0.0 {
                    continue;
                }
                let dirs = &t.shape_dirs[(i * 3 + a) * N_BETAS..(i * 3 + a + 1) * N_BETAS];
                for (g, d) in grad[..N_BETAS].iter_mut().zip(dirs) {
                    *g += ds[a] * d;
                }
            }
        }
        Ok(grad)
    }

    pub fn rest_joints(&self) -> [[f64; 3]; N_JOINTS] {
        self.rest_joints.map(|j| arr(&j))
    }
}
