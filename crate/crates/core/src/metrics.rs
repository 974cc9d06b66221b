//! Image and landmark metrics plus the evaluation report.
//!
//! LMD here is measured in scene-normalized 3D units, not image pixels; the
//! report carries that note so it is not compared against 2D pixel LMDs.

use std::path::Path;

use serde::{Serialize, Serializer};

use crate::blink::{LEFT_EYE, RIGHT_EYE};
use crate::error::{Error, Result};
use crate::motion::LandmarkSet;
use crate::render::{projected_bbox, Camera, Image, PixelRect};

/// `10 log10(1 / MSE)` over all channels; `+inf` for identical images.
pub fn psnr(pred: &Image, gt: &Image) -> Result<f64> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::shape(
            format!("psnr image size ({}x{} vs {}x{})", pred.width, pred.height, gt.width, gt.height),
            gt.width * gt.height,
            pred.width * pred.height,
        ));
    }
    let n = pred.data.len();
    if n == 0 {
        return Err(Error::Domain("psnr of empty images".into()));
    }
    let mse = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / n as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Mean Euclidean distance per landmark, one value per frame.
pub fn lmd_per_frame(pred: &[LandmarkSet], gt: &[LandmarkSet]) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::shape("lmd sequences", gt.len(), pred.len()));
    }
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let pts = p.points().iter().zip(g.points());
            let total: f64 = pts
                .map(|(a, b)| (0..3).map(|k| (a[k] as f64 - b[k] as f64).powi(2)).sum::<f64>().sqrt())
                .sum();
            total / p.points().len() as f64
        })
        .collect())
}

/// Like [`lmd_per_frame`] but in image pixels: both sets are projected
/// through the frame's camera first.
pub fn lmd_pixels_per_frame(pred: &[LandmarkSet], gt: &[LandmarkSet], cams: &[&Camera]) -> Result<Vec<f64>> {
    if pred.len() != gt.len() || cams.len() != gt.len() {
        return Err(Error::shape("lmd sequences", gt.len(), pred.len().min(cams.len())));
    }
    let project = |cam: &Camera, p: [f32; 3]| -> Result<(f64, f64)> {
        cam.project(p.map(f64::from))
            .ok_or_else(|| Error::Domain(format!("landmark {p:?} projects behind the camera")))
    };
    let mut out = Vec::with_capacity(pred.len());
    for ((p, g), cam) in pred.iter().zip(gt).zip(cams) {
        let mut total = 0.0;
        for (&a, &b) in p.points().iter().zip(g.points()) {
            let ((ax, ay), (bx, by)) = (project(cam, a)?, project(cam, b)?);
            total += (ax - bx).hypot(ay - by);
        }
        out.push(total / p.points().len() as f64);
    }
    Ok(out)
}

/// Mean over frames and landmarks of the point distance.
pub fn lmd(pred: &[LandmarkSet], gt: &[LandmarkSet]) -> Result<f64> {
    let per = lmd_per_frame(pred, gt)?;
    if per.is_empty() {
        return Err(Error::Domain("lmd of empty sequences".into()));
    }
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Pearson correlation; zero when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::shape("correlated sequences", a.len().max(2), b.len()));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    Ok(if va == 0.0 || vb == 0.0 { 0.0 } else { cov / (va * vb).sqrt() })
}

/// Bounding box of both eyes' projected landmarks.
pub fn eye_region(lm: &LandmarkSet, cam: &Camera, dilation: usize) -> Result<PixelRect> {
    projected_bbox(cam, LEFT_EYE.chain(RIGHT_EYE).map(|i| lm.point(i)), dilation)
}

/// `1 - mean luminance` of a crop: rises as a dark iris is revealed.
pub fn darkness(img: &Image) -> f64 {
    let n = (img.width * img.height) as f64;
    let lum: f64 = img
        .data
        .chunks_exact(3)
        .map(|c| 0.2126 * c[0] as f64 + 0.7152 * c[1] as f64 + 0.0722 * c[2] as f64)
        .sum();
    1.0 - lum / n
}

/// PSNR as stored in reports: a number, or the string `"+inf"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Db(pub f64);

impl Serialize for Db {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("+inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl std::fmt::Display for Db {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0 == f64::INFINITY {
            f.write_str("+inf")
        } else {
            write!(f, "{:.6}", self.0)
        }
    }
}

pub const LMD_UNITS: &str = "scene-normalized 3D units (the unit cube), not 2D image pixels";
pub const LMD_PIXEL_UNITS: &str = "2D image pixels (landmarks projected through the frame camera)";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub frame_count: usize,
    pub frames: Vec<usize>,
    pub psnr: Vec<Db>,
    pub mean_psnr: Db,
    pub lmd: Vec<f64>,
    pub mean_lmd: f64,
    pub lmd_units: String,
    /// Reserved: needs a pretrained lip-sync network.
    pub sync: Option<f64>,
    /// Reserved: needs a pretrained image network.
    pub fid: Option<f64>,
    /// Reserved: needs pretrained perceptual weights.
    pub lpips: Option<f64>,
}

impl EvalReport {
    pub fn new(checkpoint: String, frames: Vec<usize>, psnr: Vec<f64>, lmd: Vec<f64>) -> Result<Self> {
        if psnr.len() != frames.len() || lmd.len() != frames.len() || frames.is_empty() {
            return Err(Error::shape("eval report rows", frames.len(), psnr.len().min(lmd.len())));
        }
        let n = frames.len() as f64;
        // mean of per-frame dB values; any +inf frame makes the mean +inf
        let mean_psnr = psnr.iter().sum::<f64>() / n;
        Ok(EvalReport {
            checkpoint,
            frame_count: frames.len(),
            frames,
            mean_psnr: Db(mean_psnr),
            psnr: psnr.into_iter().map(Db).collect(),
            mean_lmd: lmd.iter().sum::<f64>() / n,
            lmd,
            lmd_units: LMD_UNITS.into(),
            sync: None,
            fid: None,
            lpips: None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,psnr,lmd\n");
        for ((f, p), l) in self.frames.iter().zip(&self.psnr).zip(&self.lmd) {
            out.push_str(&format!("{f},{p},{l:.9}\n"));
        }
        out
    }

    /// Writes `eval.json` and `eval.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [("eval.json", self.to_json()), ("eval.csv", self.to_csv())] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}
