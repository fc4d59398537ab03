//! Reader and writer for COLMAP text-format sparse models
//! (`cameras.txt`, `images.txt`, `points3D.txt`).
//!
//! COLMAP stores world-to-camera poses as a unit quaternion `(qw, qx, qy, qz)`
//! and a translation `t`, so the camera center is `-R^T t`. Only the
//! distortion-free `PINHOLE` and `SIMPLE_PINHOLE` models are accepted.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{quat_to_rotation, CameraIntrinsics, Correspondence, Pose};

/// Point id used in `images.txt` for keypoints without a 3D point.
pub const INVALID_POINT_ID: i64 = -1;
/// Tolerated deviation of a stored quaternion's norm from one.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-3;

pub const CAMERAS_FILE: &str = "cameras.txt";
pub const IMAGES_FILE: &str = "images.txt";
pub const POINTS_FILE: &str = "points3D.txt";

#[derive(Debug, Error)]
pub enum ColmapError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    MalformedLine { file: String, line: usize, message: String },
    #[error("{file}:{line}: unsupported camera model {model}")]
    UnsupportedCameraModel { file: String, line: usize, model: String },
    #[error("image {image} references unknown camera {camera}")]
    UnknownCamera { image: u32, camera: u32 },
    #[error("image {image} references unknown 3D point {point}")]
    UnknownPoint { image: u32, point: i64 },
}

pub type ColmapResult<T> = std::result::Result<T, ColmapError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraModel {
    SimplePinhole,
    Pinhole,
}

impl CameraModel {
    pub fn name(&self) -> &'static str {
        match self {
            CameraModel::SimplePinhole => "SIMPLE_PINHOLE",
            CameraModel::Pinhole => "PINHOLE",
        }
    }

    fn param_count(&self) -> usize {
        match self {
            CameraModel::SimplePinhole => 3,
            CameraModel::Pinhole => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapCamera {
    pub model: CameraModel,
    pub width: u32,
    pub height: u32,
    /// Raw parameters as stored in the file.
    pub params: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub pixel: Vector2<f64>,
    /// [`INVALID_POINT_ID`] when the keypoint has no 3D point.
    pub point3d_id: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapImage {
    /// Quaternion `(w, x, y, z)` exactly as stored.
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
    pub camera_id: u32,
    pub name: String,
    pub observations: Vec<Observation>,
    /// Ground-truth pose from the renormalized quaternion and `tvec`.
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapPoint {
    pub xyz: Vector3<f64>,
    pub rgb: [u8; 3],
    pub error: f64,
    /// `(image id, keypoint index)` pairs.
    pub track: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColmapModel {
    pub cameras: BTreeMap<u32, ColmapCamera>,
    pub images: BTreeMap<u32, ColmapImage>,
    pub points3d: BTreeMap<u64, ColmapPoint>,
}

struct LineCtx<'a> {
    file: &'a str,
    line: usize,
}

impl LineCtx<'_> {
    fn err(&self, message: impl Into<String>) -> ColmapError {
        ColmapError::MalformedLine {
            file: self.file.to_string(),
            line: self.line,
            message: message.into(),
        }
    }

    fn field<T: std::str::FromStr>(&self, tok: Option<&str>, what: &str) -> ColmapResult<T> {
        let tok = tok.ok_or_else(|| self.err(format!("missing {what}")))?;
        tok.parse().map_err(|_| self.err(format!("invalid {what} '{tok}'")))
    }

    fn float(&self, tok: Option<&str>, what: &str) -> ColmapResult<f64> {
        let v: f64 = self.field(tok, what)?;
        if !v.is_finite() {
            return Err(self.err(format!("non-finite {what}")));
        }
        Ok(v)
    }
}

fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

fn read_file(dir: &Path, name: &str) -> ColmapResult<String> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(ColmapError::MissingFile(path));
    }
    fs::read_to_string(&path).map_err(|source| ColmapError::Io { path, source })
}

/// Parses the contents of `cameras.txt`.
pub fn parse_cameras(text: &str) -> ColmapResult<BTreeMap<u32, ColmapCamera>> {
    let mut cameras = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if is_skippable(line) {
            continue;
        }
        let ctx = LineCtx {
            file: CAMERAS_FILE,
            line: i + 1,
        };
        let mut toks = line.split_whitespace();
        let id: u32 = ctx.field(toks.next(), "camera id")?;
        let model_name = toks.next().ok_or_else(|| ctx.err("missing camera model"))?;
        let model = match model_name {
            "PINHOLE" => CameraModel::Pinhole,
            "SIMPLE_PINHOLE" => CameraModel::SimplePinhole,
            other => {
                return Err(ColmapError::UnsupportedCameraModel {
                    file: CAMERAS_FILE.to_string(),
                    line: i + 1,
                    model: other.to_string(),
                })
            }
        };
        let width = ctx.field(toks.next(), "width")?;
        let height = ctx.field(toks.next(), "height")?;
        let params = toks
            .map(|t| ctx.float(Some(t), "camera parameter"))
            .collect::<ColmapResult<Vec<f64>>>()?;
        if params.len() != model.param_count() {
            return Err(ctx.err(format!(
                "{} expects {} parameters, got {}",
                model.name(),
                model.param_count(),
                params.len()
            )));
        }
        let intrinsics = match model {
            CameraModel::SimplePinhole => CameraIntrinsics::new(params[0], params[0], params[1], params[2]),
            CameraModel::Pinhole => CameraIntrinsics::new(params[0], params[1], params[2], params[3]),
        }
        .map_err(|e| ctx.err(e.to_string()))?;
        let camera = ColmapCamera {
            model,
            width,
            height,
            params,
            intrinsics,
        };
        if cameras.insert(id, camera).is_some() {
            return Err(ctx.err(format!("duplicate camera id {id}")));
        }
    }
    Ok(cameras)
}

fn pose_from_colmap(ctx: &LineCtx, q: [f64; 4], t: [f64; 3]) -> ColmapResult<Pose> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
        return Err(ctx.err(format!(
            "quaternion norm {norm} is not within {QUATERNION_NORM_TOLERANCE} of 1"
        )));
    }
    let r = quat_to_rotation(q).map_err(|e| ctx.err(e.to_string()))?;
    Pose::from_rotation_translation(r, Vector3::from(t)).map_err(|e| ctx.err(e.to_string()))
}

/// Parses the contents of `images.txt`. Each image takes two lines; the
/// keypoint line may be empty.
pub fn parse_images(text: &str) -> ColmapResult<BTreeMap<u32, ColmapImage>> {
    let mut images = BTreeMap::new();
    let mut lines = text.lines().enumerate();
    while let Some((i, line)) = lines.next() {
        if is_skippable(line) {
            continue;
        }
        let ctx = LineCtx {
            file: IMAGES_FILE,
            line: i + 1,
        };
        let mut toks = line.split_whitespace();
        let id: u32 = ctx.field(toks.next(), "image id")?;
        let mut q = [0.0; 4];
        for (k, v) in q.iter_mut().enumerate() {
            *v = ctx.float(toks.next(), ["qw", "qx", "qy", "qz"][k])?;
        }
        let mut t = [0.0; 3];
        for (k, v) in t.iter_mut().enumerate() {
            *v = ctx.float(toks.next(), ["tx", "ty", "tz"][k])?;
        }
        let camera_id = ctx.field(toks.next(), "camera id")?;
        // names may contain spaces; they run to the end of the line
        let name = toks.collect::<Vec<_>>().join(" ");
        if name.is_empty() {
            return Err(ctx.err("missing image name"));
        }
        let pose = pose_from_colmap(&ctx, q, t)?;

        let mut observations = Vec::new();
        // comment lines never sit between an image and its keypoints
        if let Some((j, kp_line)) = lines.next() {
            let kctx = LineCtx {
                file: IMAGES_FILE,
                line: j + 1,
            };
            let toks: Vec<&str> = kp_line.split_whitespace().collect();
            if !toks.len().is_multiple_of(3) {
                return Err(kctx.err(format!("expected X Y POINT3D_ID triples, got {} fields", toks.len())));
            }
            for chunk in toks.chunks(3) {
                let x = kctx.float(Some(chunk[0]), "keypoint x")?;
                let y = kctx.float(Some(chunk[1]), "keypoint y")?;
                let point3d_id: i64 = kctx.field(Some(chunk[2]), "point3D id")?;
                if point3d_id < INVALID_POINT_ID {
                    return Err(kctx.err(format!("invalid point3D id {point3d_id}")));
                }
                observations.push(Observation {
                    pixel: Vector2::new(x, y),
                    point3d_id,
                });
            }
        }
        let image = ColmapImage {
            qvec: q,
            tvec: t,
            camera_id,
            name,
            observations,
            pose,
        };
        if images.insert(id, image).is_some() {
            return Err(ctx.err(format!("duplicate image id {id}")));
        }
    }
    Ok(images)
}

/// Parses the contents of `points3D.txt`.
pub fn parse_points(text: &str) -> ColmapResult<BTreeMap<u64, ColmapPoint>> {
    let mut points = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if is_skippable(line) {
            continue;
        }
        let ctx = LineCtx {
            file: POINTS_FILE,
            line: i + 1,
        };
        let mut toks = line.split_whitespace();
        let id: u64 = ctx.field(toks.next(), "point3D id")?;
        let xyz = Vector3::new(
            ctx.float(toks.next(), "x")?,
            ctx.float(toks.next(), "y")?,
            ctx.float(toks.next(), "z")?,
        );
        let rgb = [
            ctx.field(toks.next(), "red")?,
            ctx.field(toks.next(), "green")?,
            ctx.field(toks.next(), "blue")?,
        ];
        let error = ctx.field(toks.next(), "reprojection error")?;
        let rest: Vec<&str> = toks.collect();
        if !rest.len().is_multiple_of(2) {
            return Err(ctx.err("track must consist of IMAGE_ID POINT2D_IDX pairs"));
        }
        let track = rest
            .chunks(2)
            .map(|p| {
                Ok((
                    ctx.field(Some(p[0]), "track image id")?,
                    ctx.field(Some(p[1]), "track keypoint index")?,
                ))
            })
            .collect::<ColmapResult<Vec<_>>>()?;
        let point = ColmapPoint { xyz, rgb, error, track };
        if points.insert(id, point).is_some() {
            return Err(ctx.err(format!("duplicate point3D id {id}")));
        }
    }
    Ok(points)
}

impl ColmapModel {
    /// Checks that every image references an existing camera and that every
    /// keypoint references an existing 3D point or the sentinel.
    pub fn validate(&self) -> ColmapResult<()> {
        for (&id, image) in &self.images {
            if !self.cameras.contains_key(&image.camera_id) {
                return Err(ColmapError::UnknownCamera {
                    image: id,
                    camera: image.camera_id,
                });
            }
            for obs in &image.observations {
                if obs.point3d_id != INVALID_POINT_ID && !self.points3d.contains_key(&(obs.point3d_id as u64)) {
                    return Err(ColmapError::UnknownPoint {
                        image: id,
                        point: obs.point3d_id,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Reads a text model from `dir`.
pub fn parse_model(dir: impl AsRef<Path>) -> ColmapResult<ColmapModel> {
    let dir = dir.as_ref();
    let cameras = parse_cameras(&read_file(dir, CAMERAS_FILE)?)?;
    let images = parse_images(&read_file(dir, IMAGES_FILE)?)?;
    let points3d = parse_points(&read_file(dir, POINTS_FILE)?)?;
    let model = ColmapModel {
        cameras,
        images,
        points3d,
    };
    model.validate()?;
    Ok(model)
}

/// Text of the three model files, in the order cameras, images, points.
pub fn serialize(model: &ColmapModel) -> [String; 3] {
    let mut cams = String::new();
    cams.push_str("# Camera list with one line of data per camera:\n");
    cams.push_str("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    let _ = writeln!(cams, "# Number of cameras: {}", model.cameras.len());
    for (id, c) in &model.cameras {
        let _ = write!(cams, "{id} {} {} {}", c.model.name(), c.width, c.height);
        for p in &c.params {
            let _ = write!(cams, " {p}");
        }
        cams.push('\n');
    }

    let mut imgs = String::new();
    imgs.push_str("# Image list with two lines of data per image:\n");
    imgs.push_str("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n");
    imgs.push_str("#   POINTS2D[] as (X, Y, POINT3D_ID)\n");
    let _ = writeln!(imgs, "# Number of images: {}", model.images.len());
    for (id, im) in &model.images {
        let [qw, qx, qy, qz] = im.qvec;
        let [tx, ty, tz] = im.tvec;
        let _ = writeln!(
            imgs,
            "{id} {qw} {qx} {qy} {qz} {tx} {ty} {tz} {} {}",
            im.camera_id, im.name
        );
        let kp: Vec<String> = im
            .observations
            .iter()
            .map(|o| format!("{} {} {}", o.pixel.x, o.pixel.y, o.point3d_id))
            .collect();
        imgs.push_str(&kp.join(" "));
        imgs.push('\n');
    }

    let mut pts = String::new();
    pts.push_str("# 3D point list with one line of data per point:\n");
    pts.push_str("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n");
    let _ = writeln!(pts, "# Number of points: {}", model.points3d.len());
    for (id, p) in &model.points3d {
        let [r, g, b] = p.rgb;
        let _ = write!(pts, "{id} {} {} {} {r} {g} {b} {}", p.xyz.x, p.xyz.y, p.xyz.z, p.error);
        for (img, idx) in &p.track {
            let _ = write!(pts, " {img} {idx}");
        }
        pts.push('\n');
    }
    [cams, imgs, pts]
}

/// Writes the model as text files into `dir`, creating it if needed.
pub fn write_model(model: &ColmapModel, dir: impl AsRef<Path>) -> ColmapResult<()> {
    let dir = dir.as_ref();
    let io = |path: PathBuf| move |source| ColmapError::Io { path, source };
    fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
    let [c, i, p] = serialize(model);
    for (name, text) in [(CAMERAS_FILE, c), (IMAGES_FILE, i), (POINTS_FILE, p)] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io(path.clone()))?;
    }
    Ok(())
}

/// One image turned into a calibrated PnP instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageProblem {
    pub image_id: u32,
    pub name: String,
    pub intrinsics: CameraIntrinsics,
    pub correspondences: Vec<Correspondence>,
    pub truth: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedImage {
    pub image_id: u32,
    pub name: String,
    pub correspondences: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Problems {
    pub problems: Vec<ImageProblem>,
    pub skipped: Vec<SkippedImage>,
}

/// Pairs every observed keypoint with its 3D point. No outlier rejection is
/// applied; repeated observations of a point are kept. Images with fewer than
/// `min_points` correspondences are skipped and reported.
pub fn build_problems(model: &ColmapModel, min_points: usize) -> Problems {
    let mut out = Problems::default();
    for (&image_id, image) in &model.images {
        let correspondences: Vec<Correspondence> = image
            .observations
            .iter()
            .filter(|o| o.point3d_id != INVALID_POINT_ID)
            .filter_map(|o| {
                let p = model.points3d.get(&(o.point3d_id as u64))?;
                Some(Correspondence {
                    point: p.xyz,
                    pixel: o.pixel,
                })
            })
            .collect();
        if correspondences.len() < min_points {
            log::warn!(
                "skipping image {} ({}): {} correspondences, need {}",
                image_id,
                image.name,
                correspondences.len(),
                min_points
            );
            out.skipped.push(SkippedImage {
                image_id,
                name: image.name.clone(),
                correspondences: correspondences.len(),
            });
            continue;
        }
        let Some(camera) = model.cameras.get(&image.camera_id) else {
            continue;
        };
        out.problems.push(ImageProblem {
            image_id,
            name: image.name.clone(),
            intrinsics: camera.intrinsics,
            correspondences,
            truth: image.pose,
        });
    }
    out
}
