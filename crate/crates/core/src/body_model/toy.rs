//! Procedural capsule-limb template over the 24-joint tree.
//!
//! The body lies supine in its own frame: `+x` towards the head, `+y` to the
//! body's left, `+z` up out of the bed. Every bone carries rings of vertices
//! placed by arc length; each joint owns one ring centred on it, which the
//! joint regressor averages. The ten shape directions scale bone lengths and
//! girths of body segments, so the geometry is exactly linear in `beta`.

#[cfg(not(feature = "std"))]
use num_traits::Float as _;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Vector3;
use rand::Rng as _;

use super::{BodyTemplate, Gender, TemplateSet, N_BETAS, N_JOINTS, SMPL_PARENTS};
use crate::{rng, Error, Result};

type V3 = Vector3<f64>;

/// Male rest joint positions in the template frame (metres).
const MALE_JOINTS: [[f64; 3]; N_JOINTS] = [
    [0.00, 0.00, 0.11],
    [-0.08, 0.09, 0.11],
    [-0.08, -0.09, 0.11],
    [0.11, 0.00, 0.11],
    [-0.48, 0.10, 0.09],
    [-0.48, -0.10, 0.09],
    [0.24, 0.00, 0.11],
    [-0.88, 0.10, 0.07],
    [-0.88, -0.10, 0.07],
    [0.30, 0.00, 0.11],
    [-0.93, 0.11, 0.16],
    [-0.93, -0.11, 0.16],
    [0.52, 0.00, 0.11],
    [0.45, 0.07, 0.12],
    [0.45, -0.07, 0.12],
    [0.63, 0.00, 0.11],
    [0.45, 0.19, 0.10],
    [0.45, -0.19, 0.10],
    [0.18, 0.23, 0.08],
    [0.18, -0.23, 0.08],
    [-0.07, 0.24, 0.07],
    [-0.07, -0.24, 0.07],
    [-0.15, 0.24, 0.07],
    [-0.15, -0.24, 0.07],
];

/// Radius of the segment ending at each joint (root: pelvis).
const MALE_GIRTH: [f64; N_JOINTS] = [
    0.13, 0.09, 0.09, 0.13, 0.075, 0.075, 0.13, 0.05, 0.05, 0.12, 0.04, 0.04, 0.05, 0.06,
    0.06, 0.095, 0.05, 0.05, 0.045, 0.045, 0.035, 0.035, 0.03, 0.03,
];

const LEGS: [usize; 6] = [4, 5, 7, 8, 10, 11];
const ARMS: [usize; 6] = [18, 19, 20, 21, 22, 23];
const TORSO: [usize; 4] = [3, 6, 9, 12];
const SHOULDERS: [usize; 4] = [13, 14, 16, 17];

/// Relative change of each bone's length per unit of each shape coefficient.
fn length_coefficients() -> [[f64; N_BETAS]; N_JOINTS] {
    let mut c = [[0.0; N_BETAS]; N_JOINTS];
    for row in c.iter_mut().skip(1) {
        row[0] = 0.04;
    }
    for &k in &LEGS {
        c[k][2] = 0.05;
    }
    for &k in &ARMS {
        c[k][3] = 0.05;
    }
    for &k in &TORSO {
        c[k][4] = 0.05;
    }
    c[15][8] = 0.08;
    for &k in &SHOULDERS {
        c[k][9] = 0.06;
    }
    c[1][9] = -0.04;
    c[2][9] = -0.04;
    c
}

/// Relative change of each segment's radius per unit of each coefficient.
fn girth_coefficients() -> [[f64; N_BETAS]; N_JOINTS] {
    let mut c = [[0.0; N_BETAS]; N_JOINTS];
    for row in c.iter_mut() {
        row[1] = 0.06;
    }
    for k in [0, 3, 6, 9] {
        c[k][5] = 0.08;
    }
    for k in [1, 2, 4, 5, 7, 8] {
        c[k][6] = 0.08;
    }
    for k in [16, 17, 18, 19, 20, 21] {
        c[k][7] = 0.08;
    }
    c[15][8] = 0.08;
    c[12][8] = 0.04;
    c
}

struct Skeleton {
    joints: [V3; N_JOINTS],
    girth: [f64; N_JOINTS],
}

fn base_skeleton(gender: Gender) -> Skeleton {
    let mut bones = [V3::zeros(); N_JOINTS];
    for k in 1..N_JOINTS {
        let p = SMPL_PARENTS[k] as usize;
        let (a, b) = (MALE_JOINTS[k], MALE_JOINTS[p]);
        bones[k] = V3::new(a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    }
    let mut girth = MALE_GIRTH;
    if gender == Gender::Female {
        for b in bones.iter_mut() {
            *b *= 0.94;
        }
        for k in [1, 2] {
            bones[k].y *= 1.12;
        }
        for k in SHOULDERS {
            bones[k].y *= 0.88;
        }
        for (k, g) in girth.iter_mut().enumerate() {
            *g *= match k {
                0 | 1 | 2 | 4 | 5 => 1.05,
                3 | 6 | 9 => 0.93,
                16..=23 => 0.88,
                _ => 0.95,
            };
        }
    }
    let r = MALE_JOINTS[0];
    let mut joints = [V3::new(r[0], r[1], r[2]); N_JOINTS];
    for k in 1..N_JOINTS {
        joints[k] = joints[SMPL_PARENTS[k] as usize] + bones[k];
    }
    Skeleton { joints, girth }
}

fn shaped_skeleton(base: &Skeleton, beta: &[f64; N_BETAS]) -> Skeleton {
    let lc = length_coefficients();
    let gc = girth_coefficients();
    let scale = |c: &[f64; N_BETAS]| 1.0 + c.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
    let mut joints = base.joints;
    for k in 1..N_JOINTS {
        let p = SMPL_PARENTS[k] as usize;
        let bone = base.joints[k] - base.joints[p];
        joints[k] = joints[p] + bone * scale(&lc[k]);
    }
    let girth = core::array::from_fn(|k| base.girth[k] * scale(&gc[k]));
    Skeleton { joints, girth }
}

/// Ring layout shared by both genders so templates stay index-compatible.
#[derive(Debug, Clone)]
struct Ring {
    joint: usize,
    fraction: f64,
    size: usize,
    phase: f64,
    radius_jitter: f64,
}

fn ring_layout(n_vertices: usize, seed: u64) -> Vec<Ring> {
    let per_ring = ((n_vertices as f64 / 10.0).sqrt().round() as usize).max(1);
    let n_rings = (n_vertices / per_ring).max(N_JOINTS);
    let extra = n_rings - N_JOINTS;

    // extra rings go to bones in proportion to their length (largest remainder)
    let base = base_skeleton(Gender::Male);
    let lengths: Vec<f64> = (0..N_JOINTS)
        .map(|k| {
            if k == 0 {
                0.0
            } else {
                (base.joints[k] - base.joints[SMPL_PARENTS[k] as usize]).norm()
            }
        })
        .collect();
    let total: f64 = lengths.iter().sum();
    let quotas: Vec<f64> = lengths.iter().map(|l| l / total * extra as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (1..N_JOINTS).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &k in order.iter().take(extra - assigned) {
        counts[k] += 1;
    }

    let mut rng = rng::stream(seed, 0x70e);
    let mut rings = Vec::with_capacity(n_rings);
    for k in 0..N_JOINTS {
        let e = counts[k];
        for j in 1..=e {
            rings.push(Ring {
                joint: k,
                fraction: j as f64 / (e + 1) as f64,
                size: 0,
                phase: 0.0,
                radius_jitter: 1.0,
            });
        }
        rings.push(Ring {
            joint: k,
            fraction: 1.0,
            size: 0,
            phase: 0.0,
            radius_jitter: 1.0,
        });
    }
    let (q, r) = (n_vertices / rings.len(), n_vertices % rings.len());
    for (i, ring) in rings.iter_mut().enumerate() {
        ring.size = q + usize::from(i < r);
        let step = core::f64::consts::TAU / ring.size as f64;
        ring.phase = rng.random_range(-0.125..0.125) * step;
        ring.radius_jitter = 1.0 + rng.random_range(-0.03..0.03);
    }
    rings
}

fn ring_frame(skel: &Skeleton, joint: usize) -> (V3, V3, V3) {
    let dir = if joint == 0 {
        skel.joints[3] - skel.joints[0]
    } else {
        skel.joints[joint] - skel.joints[SMPL_PARENTS[joint] as usize]
    };
    let d = dir.normalize();
    let up = V3::z();
    let e1 = {
        let proj = up - d * up.dot(&d);
        if proj.norm() > 1e-6 {
            proj.normalize()
        } else {
            V3::x()
        }
    };
    let e2 = d.cross(&e1);
    (d, e1, e2)
}

fn ring_vertices(skel: &Skeleton, rings: &[Ring]) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for ring in rings {
        let k = ring.joint;
        let centre = if k == 0 {
            skel.joints[0]
        } else {
            let p = SMPL_PARENTS[k] as usize;
            skel.joints[p] * (1.0 - ring.fraction) + skel.joints[k] * ring.fraction
        };
        // the frame depends only on bone direction, which shaping preserves
        let (_, e1, e2) = ring_frame(skel, k);
        let radius = skel.girth[k] * ring.radius_jitter;
        for s in 0..ring.size {
            let v = if ring.size == 1 {
                centre
            } else {
                let a = ring.phase + core::f64::consts::TAU * s as f64 / ring.size as f64;
                centre + (e1 * a.cos() + e2 * a.sin()) * radius
            };
            out.push([v.x, v.y, v.z]);
        }
    }
    out
}

fn stitch(a: &[u32], b: &[u32], faces: &mut Vec<[u32; 3]>) {
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    while i < na || j < nb {
        let advance_a = j == nb || (i < na && (i + 1) * nb <= (j + 1) * na);
        let tri = if advance_a {
            i += 1;
            [a[i - 1], a[i % na], b[j % nb]]
        } else {
            j += 1;
            [a[i % na], b[j % nb], b[j - 1]]
        };
        if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
            faces.push(tri);
        }
    }
}

fn cap(ring: &[u32], faces: &mut Vec<[u32; 3]>) {
    for s in 1..ring.len().saturating_sub(1) {
        faces.push([ring[0], ring[s], ring[s + 1]]);
    }
}

fn build_faces(rings: &[Ring]) -> Vec<[u32; 3]> {
    let mut start = 0u32;
    let indices: Vec<Vec<u32>> = rings
        .iter()
        .map(|r| {
            let idx: Vec<u32> = (start..start + r.size as u32).collect();
            start += r.size as u32;
            idx
        })
        .collect();
    let joint_ring: Vec<usize> = (0..N_JOINTS)
        .map(|k| rings.iter().position(|r| r.joint == k && r.fraction == 1.0).unwrap())
        .collect();
    let mut n_children = [0usize; N_JOINTS];
    for &p in SMPL_PARENTS.iter().skip(1) {
        n_children[p as usize] += 1;
    }

    let mut faces = Vec::new();
    cap(&indices[joint_ring[0]], &mut faces);
    for k in 1..N_JOINTS {
        let p = SMPL_PARENTS[k] as usize;
        let chain: Vec<usize> = (0..rings.len()).filter(|&i| rings[i].joint == k).collect();
        if n_children[p] == 1 {
            stitch(&indices[joint_ring[p]], &indices[chain[0]], &mut faces);
        } else {
            cap(&indices[chain[0]], &mut faces);
        }
        for w in chain.windows(2) {
            stitch(&indices[w[0]], &indices[w[1]], &mut faces);
        }
        if n_children[k] == 0 {
            cap(&indices[*chain.last().unwrap()], &mut faces);
        }
    }
    faces
}

fn build_template(gender: Gender, rings: &[Ring], faces: &[[u32; 3]]) -> BodyTemplate {
    let base = base_skeleton(gender);
    let zero = shaped_skeleton(&base, &[0.0; N_BETAS]);
    let rest_vertices = ring_vertices(&zero, rings);
    let n = rest_vertices.len();

    let mut shape_dirs = vec![0.0; n * 3 * N_BETAS];
    for j in 0..N_BETAS {
        let mut beta = [0.0; N_BETAS];
        beta[j] = 1.0;
        let moved = ring_vertices(&shaped_skeleton(&base, &beta), rings);
        for i in 0..n {
            for a in 0..3 {
                shape_dirs[(i * 3 + a) * N_BETAS + j] = moved[i][a] - rest_vertices[i][a];
            }
        }
    }

    let mut joint_regressor = vec![0.0; N_JOINTS * n];
    let mut skin_weights = vec![0.0; n * N_JOINTS];
    let mut v = 0;
    for ring in rings {
        let k = ring.joint;
        for _ in 0..ring.size {
            if ring.fraction == 1.0 {
                joint_regressor[k * n + v] = 1.0 / ring.size as f64;
            }
            if k == 0 {
                skin_weights[v * N_JOINTS] = 1.0;
            } else {
                let p = SMPL_PARENTS[k] as usize;
                let wk = 0.5 * ring.fraction * ring.fraction;
                skin_weights[v * N_JOINTS + k] = wk;
                skin_weights[v * N_JOINTS + p] = 1.0 - wk;
            }
            v += 1;
        }
    }

    BodyTemplate {
        rest_vertices,
        shape_dirs,
        joint_regressor,
        kinematic_parents: SMPL_PARENTS,
        skin_weights,
        faces: faces.to_vec(),
    }
}

/// Builds deterministic male and female toy templates with `n_vertices`
/// vertices each. The seed jitters ring phases and radii slightly.
pub fn make_toy_template(n_vertices: usize, seed: u64) -> Result<TemplateSet> {
    if n_vertices < N_JOINTS {
        return Err(Error::arg(alloc::format!(
            "toy template needs at least {N_JOINTS} vertices, got {n_vertices}"
        )));
    }
    let rings = ring_layout(n_vertices, seed);
    let faces = build_faces(&rings);
    let male = build_template(Gender::Male, &rings, &faces);
    let female = build_template(Gender::Female, &rings, &faces);
    TemplateSet::new(male, female)
}
