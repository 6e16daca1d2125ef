//! Slice expressions over `T(s, s', p, p', t)`.
//!
//! ```text
//! expr   := ['-'] [sum] 'T(' cam ',' proj ',' comp ',' comp ',' time ')'
//! sum    := 'sum_' axis | 'sum_{' axis {',' axis} '}'
//! axis   := s | s' | p | p' | t
//! cam    := s | : | INT
//! proj   := s | s' | : | INT | s_e | s'_e | s_n | s'_n
//! comp   := : | p | p' | INT            (0..=3)
//! time   := t | : | INT | t=INT
//! ```
//!
//! `s` in the projector slot pairs every camera pixel with its own projector pixel,
//! `s_e`/`s_n` keep only epipolar or non-epipolar couplings and sum over `s'`. Free
//! axes that are not summed either span the image or enumerate separate images.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{epipolar_masks, probe, PixelGrid, RectifiedGeometry, TransportTensor};

pub const GRAMMAR_HINT: &str =
    "expected [-][sum_<axis>|sum_{a,b}]T(cam,proj,p,p',t) with cam in {s,:,N}, \
proj in {s,s',:,N,s_e,s'_e,s_n,s'_n}, p/p' in {:,0..3}, t in {t,:,N,t=N}, axes in {s,s',p,p',t}";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Camera,
    Projector,
    Out,
    In,
    Time,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::Camera => "s",
            Axis::Projector => "s'",
            Axis::Out => "p",
            Axis::In => "p'",
            Axis::Time => "t",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Index {
    Free,
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectorIndex {
    /// `s' = s`.
    Diagonal,
    Free,
    Fixed(usize),
    Epipolar,
    NonEpipolar,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceExpr {
    pub negate: bool,
    pub sum: Vec<Axis>,
    pub camera: Index,
    pub projector: ProjectorIndex,
    pub out: Index,
    pub input: Index,
    pub time: Index,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceParseError(pub String);

impl fmt::Display for SliceParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}; {}", self.0, GRAMMAR_HINT)
    }
}

impl std::error::Error for SliceParseError {}

fn parse_axis(tok: &str) -> std::result::Result<Axis, SliceParseError> {
    Ok(match tok {
        "s" => Axis::Camera,
        "s'" => Axis::Projector,
        "p" => Axis::Out,
        "p'" => Axis::In,
        "t" => Axis::Time,
        _ => return Err(SliceParseError(format!("unknown axis `{tok}`"))),
    })
}

fn parse_int(tok: &str, what: &str) -> std::result::Result<usize, SliceParseError> {
    tok.parse()
        .map_err(|_| SliceParseError(format!("invalid {what} index `{tok}`")))
}

impl FromStr for SliceExpr {
    type Err = SliceParseError;

    fn from_str(text: &str) -> std::result::Result<Self, Self::Err> {
        let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let mut rest = compact.as_str();
        let negate = rest.starts_with('-');
        if negate {
            rest = &rest[1..];
        }
        let mut sum = Vec::new();
        if let Some(after) = rest.strip_prefix("sum_") {
            let (axes, tail) = if let Some(inner) = after.strip_prefix('{') {
                let close = inner
                    .find('}')
                    .ok_or_else(|| SliceParseError("unclosed `{` in sum".into()))?;
                (
                    inner[..close].split(',').collect::<Vec<_>>(),
                    &inner[close + 1..],
                )
            } else {
                let end = after
                    .find("T(")
                    .ok_or_else(|| SliceParseError("missing `T(` after sum".into()))?;
                (vec![&after[..end]], &after[end..])
            };
            for a in axes {
                let axis = parse_axis(a)?;
                if sum.contains(&axis) {
                    return Err(SliceParseError(format!("axis `{a}` summed twice")));
                }
                sum.push(axis);
            }
            rest = tail;
        }
        let body = rest
            .strip_prefix("T(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| SliceParseError(format!("expected `T(...)`, found `{rest}`")))?;
        let toks: Vec<&str> = body.split(',').collect();
        if toks.len() != 5 {
            return Err(SliceParseError(format!(
                "T takes 5 indices, got {}",
                toks.len()
            )));
        }
        let camera = match toks[0] {
            "s" | ":" => Index::Free,
            t => Index::Fixed(parse_int(t, "camera")?),
        };
        let projector = match toks[1] {
            "s" => ProjectorIndex::Diagonal,
            "s'" | ":" => ProjectorIndex::Free,
            "s_e" | "s'_e" => ProjectorIndex::Epipolar,
            "s_n" | "s'_n" => ProjectorIndex::NonEpipolar,
            t => ProjectorIndex::Fixed(parse_int(t, "projector")?),
        };
        let component = |t: &str, name: &str| -> std::result::Result<Index, SliceParseError> {
            if t == ":" || t == name {
                return Ok(Index::Free);
            }
            let v = parse_int(t, name)?;
            if v > 3 {
                return Err(SliceParseError(format!(
                    "{name} index {v} is outside 0..=3"
                )));
            }
            Ok(Index::Fixed(v))
        };
        let out = component(toks[2], "p")?;
        let input = component(toks[3], "p'")?;
        let time = match toks[4] {
            "t" | ":" => Index::Free,
            t => Index::Fixed(parse_int(t.strip_prefix("t=").unwrap_or(t), "time")?),
        };
        let expr = SliceExpr {
            negate,
            sum,
            camera,
            projector,
            out,
            input,
            time,
        };
        for &axis in &expr.sum {
            if !expr.is_free(axis) {
                return Err(SliceParseError(format!(
                    "cannot sum over `{}`: it is not free",
                    axis.name()
                )));
            }
        }
        Ok(expr)
    }
}

impl SliceExpr {
    fn is_free(&self, axis: Axis) -> bool {
        match axis {
            Axis::Camera => self.camera == Index::Free,
            Axis::Projector => self.projector == ProjectorIndex::Free,
            Axis::Out => self.out == Index::Free,
            Axis::In => self.input == Index::Free,
            Axis::Time => self.time == Index::Free,
        }
    }

    fn kept(&self, axis: Axis) -> bool {
        self.is_free(axis) && !self.sum.contains(&axis)
    }
}

/// A row-major image with a label naming its enumerated indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceImage {
    pub label: String,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

fn range(index: Index, len: usize, name: &str) -> Result<Vec<usize>> {
    match index {
        Index::Free => Ok((0..len).collect()),
        Index::Fixed(k) if k < len => Ok(vec![k]),
        Index::Fixed(k) => Err(Error::IndexOutOfRange(format!("{name} index {k} >= {len}"))),
    }
}

fn logical_projector_grid(t: &TransportTensor) -> PixelGrid {
    if t.is_coaxial() {
        t.camera()
    } else {
        t.projector()
    }
}

enum Proj {
    Diagonal,
    At(usize),
    /// Sum over every stored slot.
    All,
}

pub fn evaluate(expr: &SliceExpr, tensor: &TransportTensor) -> Result<Vec<SliceImage>> {
    let probed;
    let mut source = tensor;
    if matches!(
        expr.projector,
        ProjectorIndex::Epipolar | ProjectorIndex::NonEpipolar
    ) {
        let (epi, non) = epipolar_masks(&RectifiedGeometry {
            camera: tensor.camera(),
            projector: logical_projector_grid(tensor),
        })?;
        let mask = if expr.projector == ProjectorIndex::Epipolar {
            epi
        } else {
            non
        };
        probed = probe(tensor, &mask)?;
        source = &probed;
    }
    let summed_time;
    if expr.sum.contains(&Axis::Time) {
        summed_time = source.sum_time();
        source = &summed_time;
    }
    let t = source;
    let proj_grid = logical_projector_grid(t);
    if expr.projector == ProjectorIndex::Diagonal && !t.is_coaxial() && t.projector() != t.camera()
    {
        return Err(Error::GeometryMismatch(format!(
            "`s' = s` needs equal grids, camera {}x{} vs projector {}x{}",
            t.camera().width,
            t.camera().height,
            t.projector().width,
            t.projector().height
        )));
    }

    let cams = range(expr.camera, t.camera_len(), "camera")?;
    let projs: Vec<Proj> = match expr.projector {
        ProjectorIndex::Diagonal => vec![Proj::Diagonal],
        ProjectorIndex::Epipolar | ProjectorIndex::NonEpipolar => vec![Proj::All],
        ProjectorIndex::Free if expr.sum.contains(&Axis::Projector) => vec![Proj::All],
        ProjectorIndex::Free => (0..proj_grid.len()).map(Proj::At).collect(),
        ProjectorIndex::Fixed(k) => {
            range(Index::Fixed(k), proj_grid.len(), "projector")?;
            vec![Proj::At(k)]
        }
    };
    let outs = range(expr.out, 4, "p")?;
    let ins = range(expr.input, 4, "p'")?;
    let times = if expr.sum.contains(&Axis::Time) {
        vec![0]
    } else {
        range(expr.time, t.bins(), "time")?
    };

    let value = |s: usize, proj: &Proj, p: usize, pp: usize, tb: usize| -> f64 {
        match proj {
            Proj::Diagonal => {
                let slot = if t.is_coaxial() { 0 } else { s };
                t.at_slot(s, slot, p, pp, tb)
            }
            Proj::At(sp) => t.get(s, *sp, p, pp, tb).expect("range-checked index"),
            Proj::All => (0..t.stored_projector_len())
                .map(|slot| t.at_slot(s, slot, p, pp, tb))
                .sum(),
        }
    };

    // Image axes: camera × projector matrix, camera grid, projector grid, time row, or scalar.
    let (cam_kept, proj_kept) = (expr.kept(Axis::Camera), expr.kept(Axis::Projector));
    let time_is_image = !cam_kept && !proj_kept && expr.kept(Axis::Time);
    let (width, height) = match (cam_kept, proj_kept) {
        (true, true) => (proj_grid.len(), t.camera_len()),
        (true, false) => (t.camera().width, t.camera().height),
        (false, true) => (proj_grid.width, proj_grid.height),
        (false, false) if time_is_image => (t.bins(), 1),
        _ => (1, 1),
    };
    let sign = if expr.negate { -1.0 } else { 1.0 };
    let mut images = Vec::new();
    let enum_outs: Vec<Option<usize>> = if expr.kept(Axis::Out) {
        outs.iter().map(|&v| Some(v)).collect()
    } else {
        vec![None]
    };
    let enum_ins: Vec<Option<usize>> = if expr.kept(Axis::In) {
        ins.iter().map(|&v| Some(v)).collect()
    } else {
        vec![None]
    };
    let enum_times: Vec<Option<usize>> = if expr.kept(Axis::Time) && !time_is_image {
        times.iter().map(|&v| Some(v)).collect()
    } else {
        vec![None]
    };
    for eo in &enum_outs {
        for ei in &enum_ins {
            for et in &enum_times {
                let mut values = vec![0.0; width * height];
                let pick = |fixed: Option<usize>, all: &[usize]| -> Vec<usize> {
                    fixed.map_or(all.to_vec(), |v| vec![v])
                };
                let p_set = pick(*eo, &outs);
                let pp_set = pick(*ei, &ins);
                for (ci, &s) in cams.iter().enumerate() {
                    for (pi, proj) in projs.iter().enumerate() {
                        for &p in &p_set {
                            for &pp in &pp_set {
                                let t_iter: Vec<(usize, usize)> = match et {
                                    Some(v) => vec![(0, *v)],
                                    None => times.iter().copied().enumerate().collect(),
                                };
                                for (ti, tb) in t_iter {
                                    let pixel = match (cam_kept, proj_kept) {
                                        (true, true) => ci * width + pi,
                                        (true, false) => ci,
                                        (false, true) => pi,
                                        (false, false) if time_is_image => ti,
                                        _ => 0,
                                    };
                                    values[pixel] += value(s, proj, p, pp, tb);
                                }
                            }
                        }
                    }
                }
                values.iter_mut().for_each(|v| *v *= sign);
                let mut label = Vec::new();
                if let Some(v) = eo {
                    label.push(format!("p={v}"));
                }
                if let Some(v) = ei {
                    label.push(format!("p'={v}"));
                }
                if let Some(v) = et {
                    label.push(format!("t={v}"));
                }
                images.push(SliceImage {
                    label: label.join(","),
                    width,
                    height,
                    values,
                });
            }
        }
    }
    Ok(images)
}
