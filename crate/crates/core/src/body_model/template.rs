use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Gender, N_BETAS, N_JOINTS};
use crate::{Error, Result};

/// Rest-pose body data for one gender.
///
/// Arrays are row-major: `shape_dirs` is `[n_vertices][3][N_BETAS]`,
/// `joint_regressor` is `[N_JOINTS][n_vertices]` and `skin_weights` is
/// `[n_vertices][N_JOINTS]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyTemplate {
    pub rest_vertices: Vec<[f64; 3]>,
    pub shape_dirs: Vec<f64>,
    pub joint_regressor: Vec<f64>,
    pub kinematic_parents: [i32; N_JOINTS],
    pub skin_weights: Vec<f64>,
    pub faces: Vec<[u32; 3]>,
}

const WEIGHT_TOLERANCE: f64 = 1e-6;

impl BodyTemplate {
    pub fn n_vertices(&self) -> usize {
        self.rest_vertices.len()
    }

    #[inline]
    pub fn shape_dir(&self, vertex: usize, axis: usize, beta: usize) -> f64 {
        self.shape_dirs[(vertex * 3 + axis) * N_BETAS + beta]
    }

    #[inline]
    pub fn skin_weight(&self, vertex: usize, joint: usize) -> f64 {
        self.skin_weights[vertex * N_JOINTS + joint]
    }

    #[inline]
    pub fn regressor(&self, joint: usize, vertex: usize) -> f64 {
        self.joint_regressor[joint * self.n_vertices() + vertex]
    }

    /// Checks array shapes and the structural invariants: convex skin
    /// weights, regressor rows summing to one, and a kinematic tree rooted at
    /// joint 0 in which every parent precedes its children.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_vertices();
        if n == 0 {
            return Err(Error::InvalidTemplate("template has no vertices".into()));
        }
        let expect = |what: &str, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::shape(what, expected, got))
            }
        };
        expect("shape_dirs", n * 3 * N_BETAS, self.shape_dirs.len())?;
        expect("joint_regressor", N_JOINTS * n, self.joint_regressor.len())?;
        expect("skin_weights", n * N_JOINTS, self.skin_weights.len())?;

        let finite = self.rest_vertices.iter().flatten().all(|v| v.is_finite())
            && self.shape_dirs.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidTemplate("non-finite vertex or shape data".into()));
        }

        if self.kinematic_parents[0] != -1 {
            return Err(Error::InvalidTemplate("joint 0 must be the root".into()));
        }
        for (k, &p) in self.kinematic_parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= k {
                return Err(Error::InvalidTemplate(format!(
                    "joint {k} has parent {p}; parents must precede children"
                )));
            }
        }

        for v in 0..n {
            let row = &self.skin_weights[v * N_JOINTS..(v + 1) * N_JOINTS];
            if row.iter().any(|&w| !(w >= 0.0)) {
                return Err(Error::InvalidTemplate(format!("negative skin weight at vertex {v}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
                return Err(Error::InvalidTemplate(format!(
                    "skin weights of vertex {v} sum to {sum}"
                )));
            }
        }
        for j in 0..N_JOINTS {
            let sum: f64 = self.joint_regressor[j * n..(j + 1) * n].iter().sum();
            if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
                return Err(Error::InvalidTemplate(format!(
                    "regressor row {j} sums to {sum}"
                )));
            }
        }
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i as usize >= n)) {
            return Err(Error::InvalidTemplate(format!("face {f:?} indexes past {n} vertices")));
        }
        Ok(())
    }

    /// Rest joints regressed from the shaped rest mesh.
    pub fn regress_joints(&self, vertices: &[[f64; 3]]) -> [[f64; 3]; N_JOINTS] {
        let n = self.n_vertices();
        let mut joints = [[0.0; 3]; N_JOINTS];
        for (j, out) in joints.iter_mut().enumerate() {
            let row = &self.joint_regressor[j * n..(j + 1) * n];
            for (w, v) in row.iter().zip(vertices) {
                if *w != 0.0 {
                    for a in 0..3 {
                        out[a] += w * v[a];
                    }
                }
            }
        }
        joints
    }
}

/// One template per gender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub male: BodyTemplate,
    pub female: BodyTemplate,
}

impl TemplateSet {
    pub fn new(male: BodyTemplate, female: BodyTemplate) -> Result<Self> {
        male.validate()?;
        female.validate()?;
        if male.n_vertices() != female.n_vertices() {
            return Err(Error::shape(
                "female template vertices",
                male.n_vertices(),
                female.n_vertices(),
            ));
        }
        Ok(Self { male, female })
    }

    pub fn get(&self, gender: Gender) -> &BodyTemplate {
        match gender {
            Gender::Male => &self.male,
            Gender::Female => &self.female,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.male.n_vertices()
    }
}
