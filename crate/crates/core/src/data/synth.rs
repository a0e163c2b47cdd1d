//! Synthetic mocap: bounded joint angles driven down the kinematic tree,
//! low-pass filtered over frames, observed by a ring of pinhole cameras.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PoseSample, Skeleton};
use crate::error::{Error, Result};
use crate::geometry::{project, world_to_camera, Camera};
use crate::numerics::{Matrix, Rng};

type Mat3 = [f64; 9];
/// Per-joint `[lo, hi]` limits for rotations about the local x, y, z axes.
pub type AngleLimits = [[f64; 2]; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub subjects: Vec<String>,
    pub actions: Vec<String>,
    /// Frames per continuous motion sequence.
    pub sequence_len: usize,
    /// Horizontal distance of the cameras from the capture centre, mm.
    pub camera_radius: f64,
    pub camera_height: f64,
    /// Height the cameras look at, mm.
    pub look_at_height: f64,
    /// Maximum horizontal drift of the root from the capture centre, mm.
    pub root_wander: f64,
    /// Per-frame low-pass gain pulling each angle toward its current target.
    pub smoothing: f64,
    /// Range of frames a random angle target is held for.
    pub hold_frames: [usize; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subjects: ["S1", "S5", "S6", "S7", "S8", "S9", "S11"].map(String::from).to_vec(),
            actions: ["Directions", "Greeting", "Posing", "Sitting", "Walking"]
                .map(String::from)
                .to_vec(),
            sequence_len: 100,
            camera_radius: 4500.0,
            camera_height: 1600.0,
            look_at_height: 900.0,
            root_wander: 300.0,
            smoothing: 0.05,
            hold_frames: [20, 60],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects.is_empty() || self.actions.is_empty() {
            return Err(Error::Argument("synthetic data needs subjects and actions".into()));
        }
        if self.sequence_len == 0 || self.hold_frames[0] == 0 || self.hold_frames[0] > self.hold_frames[1] {
            return Err(Error::Argument(
                "sequence length and hold range must be positive".into(),
            ));
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return Err(Error::Argument("smoothing gain must lie in (0, 1]".into()));
        }
        if !(self.camera_radius > 0.0) {
            return Err(Error::Argument("camera radius must be positive".into()));
        }
        Ok(())
    }
}

/// Generates `n_frames` samples with the default [`SynthConfig`].
pub fn synth_generate(skeleton: &Skeleton, n_frames: usize, n_cameras: usize, rng: &mut Rng) -> Result<Dataset> {
    synth_generate_with(skeleton, n_frames, n_cameras, &SynthConfig::default(), rng)
}

/// Generates `n_frames` samples, each one frame seen by one camera.
///
/// Frames are grouped into sequences of `sequence_len`; sequence `k` belongs
/// to subject `k mod n_subjects` and cycles through the actions. Frame `g`
/// is observed by camera `g mod n_cameras`.
pub fn synth_generate_with(
    skeleton: &Skeleton,
    n_frames: usize,
    n_cameras: usize,
    cfg: &SynthConfig,
    rng: &mut Rng,
) -> Result<Dataset> {
    skeleton.validate()?;
    cfg.validate()?;
    if n_frames == 0 {
        return Err(Error::Argument("n_frames must be at least 1".into()));
    }
    if n_cameras == 0 {
        return Err(Error::Argument("n_cameras must be at least 1".into()));
    }
    let base = Rng::new(rng.next_u64());
    let cameras = ring_cameras(n_cameras, cfg, &mut base.child(u64::MAX))?;
    let order = skeleton.topological_order();

    let mut samples = Vec::with_capacity(n_frames);
    let n_seq = n_frames.div_ceil(cfg.sequence_len);
    for seq in 0..n_seq {
        let subject = &cfg.subjects[seq % cfg.subjects.len()];
        let action = &cfg.actions[(seq / cfg.subjects.len()) % cfg.actions.len()];
        let lengths = subject_bone_lengths(skeleton, subject);
        let limits = angle_limits(skeleton, action);
        let mut srng = base.child(seq as u64);
        let mut motion = Motion::new(&limits, cfg, &mut srng);
        let root_height = standing_root_height(skeleton, &lengths);

        let start = seq * cfg.sequence_len;
        let end = (start + cfg.sequence_len).min(n_frames);
        for g in start..end {
            if g > start {
                motion.advance(cfg, &mut srng);
            }
            let root_pos = [motion.root_xy[0].value, motion.root_xy[1].value, root_height];
            let pose = pose_from_angles(
                skeleton,
                &order,
                &lengths,
                root_pos,
                &motion.root_rotation(),
                &motion.angles(),
            )?;
            let cam = &cameras[g % n_cameras];
            let p_cam = world_to_camera(&pose, cam)?;
            let uv = project(&p_cam, cam)
                .map_err(|e| Error::Numeric(format!("synthetic pose left the camera frustum: {e}")))?;
            let joints2d = uv.select_rows(&skeleton.input_joint_map);
            samples.push(PoseSample {
                subject: subject.clone(),
                action: action.clone(),
                camera_id: cam.id.clone(),
                frame: g,
                joints3d_world: pose,
                joints2d: Some(joints2d),
            });
        }
    }
    Ok(Dataset {
        skeleton: skeleton.clone(),
        samples,
        cameras,
    })
}

/// Cameras evenly spaced on a horizontal ring, all looking at the capture
/// centre, with slightly jittered heights and intrinsics.
pub fn ring_cameras(n: usize, cfg: &SynthConfig, rng: &mut Rng) -> Result<Vec<Camera>> {
    (0..n)
        .map(|k| {
            let angle = std::f64::consts::TAU * k as f64 / n as f64 + std::f64::consts::FRAC_PI_4;
            let radius = cfg.camera_radius * rng.uniform_range(0.95, 1.05);
            let height = cfg.camera_height + rng.uniform_range(-150.0, 150.0);
            let f = 1145.0 + rng.uniform_range(-5.0, 5.0);
            Camera::look_at(
                format!("cam{k}"),
                [radius * angle.cos(), radius * angle.sin(), height],
                [0.0, 0.0, cfg.look_at_height],
                [0.0, 0.0, 1.0],
                [f, f + rng.uniform_range(-1.0, 1.0)],
                [
                    512.0 + rng.uniform_range(-3.0, 3.0),
                    512.0 + rng.uniform_range(-3.0, 3.0),
                ],
            )
        })
        .collect()
}

/// Bone lengths for a subject: a per-subject global scale in [0.92, 1.08]
/// times a per-bone factor in [0.98, 1.02], both fixed by the subject tag.
pub fn subject_bone_lengths(skeleton: &Skeleton, subject: &str) -> Vec<f64> {
    let mut rng = Rng::new(fnv1a(subject.as_bytes()));
    let scale = rng.uniform_range(0.92, 1.08);
    skeleton
        .bone_lengths
        .iter()
        .map(|l| l * scale * rng.uniform_range(0.98, 1.02))
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn standing_root_height(skeleton: &Skeleton, lengths: &[f64]) -> f64 {
    let leg = |names: [&str; 2]| -> Option<f64> {
        names
            .iter()
            .map(|n| skeleton.joint_index(n).map(|j| lengths[j]))
            .sum::<Option<f64>>()
    };
    leg(["RKnee", "RAnkle"]).unwrap_or(900.0) + 30.0
}

/// Joint-angle limits for an action. Joints not in the table get ±0.2 rad.
pub fn angle_limits(skeleton: &Skeleton, action: &str) -> Vec<AngleLimits> {
    const Z: [f64; 2] = [0.0, 0.0];
    let base = |name: &str| -> AngleLimits {
        match name {
            "RHip" | "LHip" => [[-0.1, 0.1], [-0.1, 0.1], [-0.15, 0.15]],
            "RKnee" => [[-0.5, 1.2], [-0.5, 0.15], [-0.3, 0.3]],
            "LKnee" => [[-0.5, 1.2], [-0.15, 0.5], [-0.3, 0.3]],
            "RAnkle" | "LAnkle" => [[-1.6, 0.0], [-0.05, 0.05], Z],
            "Spine" => [[-0.6, 0.2], [-0.25, 0.25], [-0.4, 0.4]],
            "Thorax" => [[-0.3, 0.15], [-0.15, 0.15], [-0.3, 0.3]],
            "Neck" => [[-0.4, 0.3], [-0.3, 0.3], [-0.2, 0.2]],
            "Head" => [[-0.3, 0.3], [-0.2, 0.2], [-0.6, 0.6]],
            "LShoulder" | "RShoulder" => [Z, [-0.2, 0.2], [-0.2, 0.2]],
            "LElbow" => [[-0.8, 2.2], [-0.1, 1.5], [-0.6, 0.6]],
            "RElbow" => [[-0.8, 2.2], [-1.5, 0.1], [-0.6, 0.6]],
            "LWrist" | "RWrist" => [[0.0, 2.2], [-0.1, 0.1], Z],
            _ => [[-0.2, 0.2]; 3],
        }
    };
    skeleton
        .names
        .iter()
        .map(|name| {
            let mut l = base(name);
            match (action, name.as_str()) {
                ("Greeting", "LElbow") => l[0] = [1.2, 2.6],
                ("Greeting", "RElbow") => l[0] = [0.5, 2.6],
                ("Greeting", "LWrist" | "RWrist") => l[0] = [0.2, 1.5],
                ("Sitting", "RKnee" | "LKnee") => l[0] = [1.2, 1.6],
                ("Sitting", "RAnkle" | "LAnkle") => l[0] = [-1.8, -1.2],
                ("Sitting", "Spine") => l[0] = [-0.5, 0.1],
                ("Walking", "RKnee" | "LKnee") => l[0] = [-0.5, 0.6],
                ("Walking", "RAnkle" | "LAnkle") => l[0] = [-1.0, 0.0],
                ("Walking", "LElbow" | "RElbow") => l[0] = [-0.5, 0.5],
                ("Walking", "LWrist" | "RWrist") => l[0] = [0.1, 0.8],
                _ => {}
            }
            l
        })
        .collect()
}

/// One smoothly varying scalar: chases a random target inside `[lo, hi]`
/// and re-draws the target every few frames.
#[derive(Debug, Clone)]
struct Channel {
    lo: f64,
    hi: f64,
    value: f64,
    target: f64,
    hold: usize,
}

impl Channel {
    fn new(lo: f64, hi: f64, cfg: &SynthConfig, rng: &mut Rng) -> Self {
        let mut c = Self {
            lo,
            hi,
            value: rng.uniform_range(lo, hi),
            target: 0.0,
            hold: 0,
        };
        c.retarget(cfg, rng);
        c
    }

    fn retarget(&mut self, cfg: &SynthConfig, rng: &mut Rng) {
        self.target = rng.uniform_range(self.lo, self.hi);
        let [a, b] = cfg.hold_frames;
        self.hold = a + rng.below(b - a + 1);
    }

    fn advance(&mut self, cfg: &SynthConfig, rng: &mut Rng) {
        if self.hold == 0 {
            self.retarget(cfg, rng);
        }
        self.hold -= 1;
        // convex step: value stays within [lo, hi]
        self.value += cfg.smoothing * (self.target - self.value);
    }
}

struct Motion {
    joints: Vec<[Channel; 3]>,
    heading: f64,
    turn_rate: f64,
    tilt: [Channel; 2],
    root_xy: [Channel; 2],
}

impl Motion {
    fn new(limits: &[AngleLimits], cfg: &SynthConfig, rng: &mut Rng) -> Self {
        let joints = limits
            .iter()
            .map(|l| {
                [
                    Channel::new(l[0][0], l[0][1], cfg, rng),
                    Channel::new(l[1][0], l[1][1], cfg, rng),
                    Channel::new(l[2][0], l[2][1], cfg, rng),
                ]
            })
            .collect();
        let w = cfg.root_wander;
        Self {
            joints,
            heading: rng.uniform_range(0.0, std::f64::consts::TAU),
            turn_rate: rng.uniform_range(-0.01, 0.01),
            tilt: [Channel::new(-0.1, 0.1, cfg, rng), Channel::new(-0.1, 0.1, cfg, rng)],
            root_xy: [Channel::new(-w, w, cfg, rng), Channel::new(-w, w, cfg, rng)],
        }
    }

    fn advance(&mut self, cfg: &SynthConfig, rng: &mut Rng) {
        for j in &mut self.joints {
            for c in j {
                c.advance(cfg, rng);
            }
        }
        self.heading += self.turn_rate;
        for c in self.tilt.iter_mut().chain(self.root_xy.iter_mut()) {
            c.advance(cfg, rng);
        }
    }

    fn angles(&self) -> Vec<[f64; 3]> {
        self.joints
            .iter()
            .map(|c| [c[0].value, c[1].value, c[2].value])
            .collect()
    }

    fn root_rotation(&self) -> Mat3 {
        mul3(
            &mul3(&rot_z(self.heading), &rot_x(self.tilt[0].value)),
            &rot_y(self.tilt[1].value),
        )
    }
}

/// Forward kinematics: each joint's frame is its parent's frame times the
/// local rotation `Rz·Ry·Rx`, and the joint sits one bone along the rotated
/// rest direction from its parent.
pub fn pose_from_angles(
    skeleton: &Skeleton,
    order: &[usize],
    lengths: &[f64],
    root_pos: [f64; 3],
    root_rot: &[f64; 9],
    angles: &[[f64; 3]],
) -> Result<Matrix> {
    let n = skeleton.n_joints();
    if angles.len() != n || lengths.len() != n || order.len() != n {
        return Err(Error::Shape("kinematic tables do not match the skeleton".into()));
    }
    let mut frames = vec![[0.0; 9]; n];
    let mut pos = Matrix::zeros(n, 3);
    frames[skeleton.root_idx] = *root_rot;
    pos.row_mut(skeleton.root_idx).copy_from_slice(&root_pos);
    for &j in order.iter().skip(1) {
        let p = skeleton.parents[j].expect("non-root joint");
        let [ax, ay, az] = angles[j];
        let local = mul3(&mul3(&rot_z(az), &rot_y(ay)), &rot_x(ax));
        let frame = mul3(&frames[p], &local);
        let d = skeleton.rest_dirs[j];
        let bone = apply3(&frame, [d[0] * lengths[j], d[1] * lengths[j], d[2] * lengths[j]]);
        let parent = [pos[(p, 0)], pos[(p, 1)], pos[(p, 2)]];
        pos.row_mut(j)
            .copy_from_slice(&[parent[0] + bone[0], parent[1] + bone[1], parent[2] + bone[2]]);
        frames[j] = frame;
    }
    Ok(pos)
}

fn rot_x(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c]
}

fn rot_y(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c]
}

fn rot_z(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]
}

fn mul3(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = (0..3).map(|k| a[3 * r + k] * b[3 * k + c]).sum();
        }
    }
    out
}

fn apply3(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
        m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
        m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
    ]
}
