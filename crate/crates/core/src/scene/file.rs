//! TOML scene description.
//!
//! ```toml
//! geometry = "coaxial"            # or "projector_camera"
//!
//! [render]                        # optional defaults for the simulator
//! width = 8
//! height = 8
//! bins = 128
//! time_bin_ps = 25.0
//!
//! [projector_camera]              # required for geometry = "projector_camera"
//! baseline = 0.05                 # meters
//! focal_px = 8.0
//!
//! [[surfaces]]
//! name = "wall"
//! patch = [0.0, 0.0, 1.0, 1.0]    # x0, y0, x1, y1 in normalized image coordinates
//! depth = 0.6                     # meters
//! material = { kind = "diffuse_depolarizer", albedo = 0.8, residual_dop = 0.2 }
//!
//! [[chains]]
//! surfaces = ["wall", "plate"]    # visited in this order
//!
//! [scatter_volume]
//! backscatter = [1, 0, 0, 0,  0, 0.9, 0, 0,  0, 0, 0.9, 0,  0, 0, 0, 0.8]
//! strength = 0.3
//! depth = 0.05
//! ```
//!
//! Material kinds: `diffuse_depolarizer` (`albedo`, `residual_dop`, optional
//! `circular_ratio`), `fresnel_dielectric` (`eta`, `incidence_deg`), `ideal_mirror`,
//! `retarder_plate` (`retardance_deg`, `axis_deg`), `custom` (`mueller`, 16 numbers in
//! row-major order). Angles are in degrees.

use std::fmt;
use std::ops::Range;

use serde::Deserialize;
use toml::Spanned;

use super::{
    GeometryMode, MaterialSpec, Patch, ProjectorCameraParams, ScatterVolume, SceneSpec,
    SpecularChain, Surface,
};
use crate::error::Error;
use crate::polarization::MuellerMatrix;

/// Validation failure pointing at a line of the scene file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneFileError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for SceneFileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for SceneFileError {}

impl From<SceneFileError> for Error {
    fn from(e: SceneFileError) -> Self {
        Error::Config(e.to_string())
    }
}

/// Simulator defaults a scene file may carry.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSettings {
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub bins: Option<usize>,
    pub time_bin_ps: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    #[serde(default = "default_geometry")]
    geometry: Spanned<String>,
    render: Option<RenderSettings>,
    projector_camera: Option<Spanned<ProjectorCameraParams>>,
    #[serde(default)]
    surfaces: Vec<Spanned<RawSurface>>,
    #[serde(default)]
    chains: Vec<Spanned<RawChain>>,
    scatter_volume: Option<Spanned<RawVolume>>,
}

fn default_geometry() -> Spanned<String> {
    Spanned::new(0..0, "coaxial".to_string())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSurface {
    name: String,
    patch: Spanned<[f64; 4]>,
    depth: Spanned<f64>,
    material: Spanned<RawMaterial>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawMaterial {
    DiffuseDepolarizer {
        albedo: f64,
        residual_dop: f64,
        #[serde(default = "default_circular_ratio")]
        circular_ratio: f64,
    },
    FresnelDielectric {
        eta: f64,
        incidence_deg: f64,
    },
    IdealMirror,
    RetarderPlate {
        retardance_deg: f64,
        axis_deg: f64,
    },
    Custom {
        mueller: Vec<f64>,
    },
}

fn default_circular_ratio() -> f64 {
    0.5
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChain {
    surfaces: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVolume {
    backscatter: Vec<f64>,
    strength: f64,
    depth: f64,
}

/// Parsed scene plus any render defaults it declared.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFile {
    pub scene: SceneSpec,
    pub render: Option<RenderSettings>,
}

struct Lines<'a>(&'a str);

impl Lines<'_> {
    fn at(&self, span: Range<usize>) -> Option<usize> {
        if span.start == 0 && span.end == 0 {
            return None;
        }
        Some(self.0[..span.start.min(self.0.len())].matches('\n').count() + 1)
    }

    fn err(&self, span: Range<usize>, message: String) -> SceneFileError {
        SceneFileError {
            line: self.at(span),
            message,
        }
    }
}

fn mueller_from(values: &[f64], what: &str) -> Result<MuellerMatrix, String> {
    if values.len() != 16 {
        return Err(format!("{what} needs 16 numbers, got {}", values.len()));
    }
    MuellerMatrix::from_row_major(values).map_err(|e| format!("{what}: {e}"))
}

pub fn parse_scene(text: &str) -> Result<SceneFile, SceneFileError> {
    let lines = Lines(text);
    let raw: RawScene = toml::from_str(text).map_err(|e| SceneFileError {
        line: e.span().and_then(|s| lines.at(s)),
        message: e.message().trim().to_string(),
    })?;

    let mut surfaces = Vec::with_capacity(raw.surfaces.len());
    for (i, spanned) in raw.surfaces.iter().enumerate() {
        let s = spanned.get_ref();
        let field = |name: &str| format!("surfaces[{i}] (`{}`).{name}", s.name);
        if surfaces.iter().any(|o: &Surface| o.name == s.name) {
            return Err(lines.err(
                spanned.span(),
                format!("surfaces[{i}]: duplicate name `{}`", s.name),
            ));
        }
        let [x0, y0, x1, y1] = *s.patch.get_ref();
        if !(x0 < x1 && y0 < y1) {
            return Err(lines.err(
                s.patch.span(),
                format!("{}: needs x0 < x1 and y0 < y1", field("patch")),
            ));
        }
        let depth = *s.depth.get_ref();
        if !(depth >= 0.0) || !depth.is_finite() {
            return Err(lines.err(
                s.depth.span(),
                format!("{}: must be >= 0, got {depth}", field("depth")),
            ));
        }
        let material = match s.material.get_ref() {
            RawMaterial::DiffuseDepolarizer {
                albedo,
                residual_dop,
                circular_ratio,
            } => MaterialSpec::DiffuseDepolarizer {
                albedo: *albedo,
                residual_dop: *residual_dop,
                circular_ratio: *circular_ratio,
            },
            RawMaterial::FresnelDielectric { eta, incidence_deg } => {
                MaterialSpec::FresnelDielectric {
                    eta: *eta,
                    incidence: incidence_deg.to_radians(),
                }
            }
            RawMaterial::IdealMirror => MaterialSpec::IdealMirror,
            RawMaterial::RetarderPlate {
                retardance_deg,
                axis_deg,
            } => MaterialSpec::RetarderPlate {
                retardance: retardance_deg.to_radians(),
                axis: axis_deg.to_radians(),
            },
            RawMaterial::Custom { mueller } => MaterialSpec::Custom(
                mueller_from(mueller, &field("material.mueller"))
                    .map_err(|m| lines.err(s.material.span(), m))?,
            ),
        };
        material.validate().map_err(|e| {
            lines.err(
                s.material.span(),
                format!("{}: {}", field("material"), strip_prefix(&e)),
            )
        })?;
        surfaces.push(Surface {
            name: s.name.clone(),
            patch: Patch { x0, y0, x1, y1 },
            depth,
            material,
        });
    }

    let mut chains = Vec::with_capacity(raw.chains.len());
    for (i, spanned) in raw.chains.iter().enumerate() {
        let names = &spanned.get_ref().surfaces;
        if names.len() < 2 {
            return Err(lines.err(
                spanned.span(),
                format!("chains[{i}].surfaces: needs at least two entries"),
            ));
        }
        let indices = names
            .iter()
            .map(|n| {
                surfaces.iter().position(|s| &s.name == n).ok_or_else(|| {
                    lines.err(
                        spanned.span(),
                        format!("chains[{i}].surfaces: unknown surface `{n}`"),
                    )
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        chains.push(SpecularChain { surfaces: indices });
    }

    let scatter_volume = match &raw.scatter_volume {
        None => None,
        Some(spanned) => {
            let v = spanned.get_ref();
            let backscatter = mueller_from(&v.backscatter, "scatter_volume.backscatter")
                .map_err(|m| lines.err(spanned.span(), m))?;
            Some(ScatterVolume {
                backscatter,
                strength: v.strength,
                depth: v.depth,
            })
        }
    };

    let geometry = match raw.geometry.get_ref().as_str() {
        "coaxial" => GeometryMode::Coaxial,
        "projector_camera" => {
            let params = raw.projector_camera.as_ref().ok_or_else(|| {
                lines.err(
                    raw.geometry.span(),
                    "geometry: `projector_camera` needs a [projector_camera] table with baseline and focal_px".into(),
                )
            })?;
            GeometryMode::ProjectorCamera(*params.get_ref())
        }
        other => {
            return Err(lines.err(
                raw.geometry.span(),
                format!("geometry: expected `coaxial` or `projector_camera`, got `{other}`"),
            ))
        }
    };

    let scene = SceneSpec {
        surfaces,
        chains,
        scatter_volume,
        geometry,
    };
    scene.validate().map_err(|e| {
        let span = match (&raw.scatter_volume, &raw.projector_camera) {
            (Some(v), _) if e.to_string().contains("scatter_volume") => v.span(),
            (_, Some(p)) if e.to_string().contains("projector_camera") => p.span(),
            _ => 0..0,
        };
        lines.err(span, strip_prefix(&e))
    })?;
    Ok(SceneFile {
        scene,
        render: raw.render,
    })
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::InvalidArgument(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIRROR: &str = r#"
geometry = "coaxial"

[render]
width = 2
height = 2
bins = 200
time_bin_ps = 25.0

[[surfaces]]
name = "mirror"
patch = [0.0, 0.0, 1.0, 1.0]
depth = 0.6
material = { kind = "ideal_mirror" }
"#;

    #[test]
    fn parses_mirror_scene() {
        let f = parse_scene(MIRROR).unwrap();
        assert_eq!(f.scene.surfaces.len(), 1);
        assert_eq!(f.scene.surfaces[0].material, MaterialSpec::IdealMirror);
        assert_eq!(f.render.unwrap().bins, Some(200));
        assert_eq!(f.scene.geometry, GeometryMode::Coaxial);
    }

    #[test]
    fn parses_every_material_and_extras() {
        let text = r#"
geometry = "projector_camera"

[projector_camera]
baseline = 0.05
focal_px = 8.0

[[surfaces]]
name = "a"
patch = [0.0, 0.0, 1.0, 1.0]
depth = 0.6
material = { kind = "diffuse_depolarizer", albedo = 0.8, residual_dop = 0.2 }

[[surfaces]]
name = "b"
patch = [0.2, 0.2, 0.6, 0.6]
depth = 0.4
material = { kind = "fresnel_dielectric", eta = 1.5, incidence_deg = 45.0 }

[[surfaces]]
name = "c"
patch = [0.6, 0.6, 0.9, 0.9]
depth = 0.3
material = { kind = "retarder_plate", retardance_deg = 90.0, axis_deg = 30.0 }

[[surfaces]]
name = "d"
patch = [0.0, 0.0, 0.1, 0.1]
depth = 0.3
material = { kind = "custom", mueller = [1, 0, 0, 0, 0, 0.5, 0, 0, 0, 0, 0.5, 0, 0, 0, 0, 0.5] }

[[chains]]
surfaces = ["b", "a"]

[scatter_volume]
backscatter = [1, 0, 0, 0, 0, 0.9, 0, 0, 0, 0, 0.9, 0, 0, 0, 0, 0.8]
strength = 0.3
depth = 0.05
"#;
        let f = parse_scene(text).unwrap();
        let s = &f.scene;
        assert_eq!(s.surfaces.len(), 4);
        assert_eq!(
            s.chains,
            vec![SpecularChain {
                surfaces: vec![1, 0]
            }]
        );
        assert!(matches!(s.geometry, GeometryMode::ProjectorCamera(p) if p.focal_px == 8.0));
        match s.surfaces[2].material {
            MaterialSpec::RetarderPlate { retardance, axis } => {
                assert!((retardance - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
                assert!((axis - 30f64.to_radians()).abs() < 1e-15);
            }
            ref m => panic!("unexpected {m:?}"),
        }
        assert_eq!(
            s.surfaces[0].material,
            MaterialSpec::DiffuseDepolarizer {
                albedo: 0.8,
                residual_dop: 0.2,
                circular_ratio: 0.5
            }
        );
        assert_eq!(s.scatter_volume.as_ref().unwrap().strength, 0.3);
    }

    #[test]
    fn errors_name_field_and_line() {
        let bad_depth = MIRROR.replace("depth = 0.6", "depth = -1.0");
        let e = parse_scene(&bad_depth).unwrap_err();
        assert_eq!(e.line, Some(13));
        assert!(e.message.contains("depth"), "{e}");

        let bad_albedo = MIRROR.replace(
            r#"{ kind = "ideal_mirror" }"#,
            r#"{ kind = "diffuse_depolarizer", albedo = 2.0, residual_dop = 0.1 }"#,
        );
        let e = parse_scene(&bad_albedo).unwrap_err();
        assert_eq!(e.line, Some(14));
        assert!(e.message.contains("albedo"), "{e}");

        let unknown = MIRROR.replace("depth = 0.6", "depth = 0.6\ncolour = 3");
        let e = parse_scene(&unknown).unwrap_err();
        assert!(e.line.is_some());
        assert!(e.message.contains("colour"), "{e}");

        let missing = MIRROR.replace("depth = 0.6\n", "");
        let e = parse_scene(&missing).unwrap_err();
        assert!(e.message.contains("depth"), "{e}");

        let bad_kind = MIRROR.replace("ideal_mirror", "glitter");
        assert!(parse_scene(&bad_kind)
            .unwrap_err()
            .message
            .contains("glitter"));

        let bad_geometry = MIRROR.replace(r#"geometry = "coaxial""#, r#"geometry = "orbital""#);
        let e = parse_scene(&bad_geometry).unwrap_err();
        assert_eq!(e.line, Some(2));

        let no_params = MIRROR.replace(
            r#"geometry = "coaxial""#,
            r#"geometry = "projector_camera""#,
        );
        assert!(parse_scene(&no_params)
            .unwrap_err()
            .message
            .contains("projector_camera"));
    }

    #[test]
    fn chain_names_must_resolve() {
        let text = format!("{MIRROR}\n[[chains]]\nsurfaces = [\"mirror\", \"ghost\"]\n");
        let e = parse_scene(&text).unwrap_err();
        assert!(e.message.contains("ghost"), "{e}");
    }
}
