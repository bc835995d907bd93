//! Line-based experiment configuration: `[section]` headers and `key = value`
//! lines, with strict unknown-key rejection, dotted-path overrides, and a
//! resolved-config emitter whose output reparses to the same configuration.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Ball, FoliationFamily, GeometrySpec, MetricFamily, V3};
use crate::modnormal::{CutoffSpec, NormalOpConfig, WeightVariant};
use crate::transform::{Bump, Phantom};

#[derive(Clone, Debug, PartialEq)]
pub struct GeometrySection {
    pub metric: String,
    pub conformal_epsilon: f64,
    pub domain_center: V3,
    pub domain_radius: f64,
    pub extended_radius: f64,
    pub foliation_center: V3,
    pub foliation_offset: f64,
    pub step: f64,
    pub t_max: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        GeometrySection {
            metric: "euclidean".into(),
            conformal_epsilon: 0.05,
            domain_center: V3::new(2.0, 0.0, 0.0),
            domain_radius: 1.0,
            extended_radius: 1.1,
            foliation_center: V3::new(0.0, 0.0, 0.0),
            foliation_offset: 0.0,
            step: 1e-2,
            t_max: 100.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSection {
    pub kind: String,
    pub center: V3,
    pub sigma: f64,
    pub amplitude: f64,
    pub separation: f64,
}

impl Default for PhantomSection {
    fn default() -> Self {
        PhantomSection {
            kind: "gaussian".into(),
            center: V3::new(2.0, 0.0, 0.0),
            sigma: 0.3,
            amplitude: 1.0,
            separation: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalOpSection {
    pub h: f64,
    pub variant: String,
    pub cutoff: String,
    pub n_lambda: usize,
    pub n_theta: usize,
    pub check_damping: bool,
}

impl Default for NormalOpSection {
    fn default() -> Self {
        NormalOpSection {
            h: 0.1,
            variant: "global".into(),
            cutoff: "matched".into(),
            n_lambda: 24,
            n_theta: 48,
            check_damping: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub grid_n: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tol: 1e-8,
            max_iter: 2000,
            grid_n: 13,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSection {
    pub h_values: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            h_values: vec![0.2, 0.1, 0.05],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputSection {
    pub dir: String,
    pub write_volumes: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "runs".into(),
            write_volumes: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentConfig {
    pub geometry: GeometrySection,
    pub phantom: PhantomSection,
    pub normal_op: NormalOpSection,
    pub solver: SolverSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Argument(format!("{}: expected a number, got {:?}", key, v)))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Argument(format!("{}: expected an integer, got {:?}", key, v)))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Argument(format!(
            "{}: expected true or false, got {:?}",
            key, v
        ))),
    }
}

fn parse_v3(key: &str, v: &str) -> Result<V3> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Argument(format!(
            "{}: expected three comma-separated numbers, got {:?}",
            key, v
        )));
    }
    Ok(V3::new(
        parse_f64(key, parts[0])?,
        parse_f64(key, parts[1])?,
        parse_f64(key, parts[2])?,
    ))
}

fn parse_f64_list(key: &str, v: &str) -> Result<Vec<f64>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse_f64(key, p.trim())).collect()
}

fn fmt_v3(v: &V3) -> String {
    format!("{},{},{}", v.x, v.y, v.z)
}

impl ExperimentConfig {
    /// Apply one `section.key = value` assignment.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let path = format!("{}.{}", section, key);
        match section {
            "geometry" => match key {
                "metric" => self.geometry.metric = value.to_string(),
                "conformal_epsilon" => self.geometry.conformal_epsilon = parse_f64(&path, value)?,
                "domain_center" => self.geometry.domain_center = parse_v3(&path, value)?,
                "domain_radius" => self.geometry.domain_radius = parse_f64(&path, value)?,
                "extended_radius" => self.geometry.extended_radius = parse_f64(&path, value)?,
                "foliation_center" => self.geometry.foliation_center = parse_v3(&path, value)?,
                "foliation_offset" => self.geometry.foliation_offset = parse_f64(&path, value)?,
                "step" => self.geometry.step = parse_f64(&path, value)?,
                "t_max" => self.geometry.t_max = parse_f64(&path, value)?,
                _ => return Err(Error::Argument(format!("unknown key {:?}", path))),
            },
            "phantom" => match key {
                "kind" => self.phantom.kind = value.to_string(),
                "center" => self.phantom.center = parse_v3(&path, value)?,
                "sigma" => self.phantom.sigma = parse_f64(&path, value)?,
                "amplitude" => self.phantom.amplitude = parse_f64(&path, value)?,
                "separation" => self.phantom.separation = parse_f64(&path, value)?,
                _ => return Err(Error::Argument(format!("unknown key {:?}", path))),
            },
            "normal_op" => match key {
                "h" => self.normal_op.h = parse_f64(&path, value)?,
                "variant" => self.normal_op.variant = value.to_string(),
                "cutoff" => self.normal_op.cutoff = value.to_string(),
                "n_lambda" => self.normal_op.n_lambda = parse_usize(&path, value)?,
                "n_theta" => self.normal_op.n_theta = parse_usize(&path, value)?,
                "check_damping" => self.normal_op.check_damping = parse_bool(&path, value)?,
                _ => return Err(Error::Argument(format!("unknown key {:?}", path))),
            },
            "solver" => match key {
                "tol" => self.solver.tol = parse_f64(&path, value)?,
                "max_iter" => self.solver.max_iter = parse_usize(&path, value)?,
                "grid_n" => self.solver.grid_n = parse_usize(&path, value)?,
                _ => return Err(Error::Argument(format!("unknown key {:?}", path))),
            },
            "sweep" => match key {
                "h_values" => self.sweep.h_values = parse_f64_list(&path, value)?,
                _ => return Err(Error::Argument(format!("unknown key {:?}", path))),
            },
            "output" => match key {
                "dir" => self.output.dir = value.to_string(),
                "write_volumes" => self.output.write_volumes = parse_bool(&path, value)?,
                _ => return Err(Error::Argument(format!("unknown key {:?}", path))),
            },
            _ => return Err(Error::Argument(format!("unknown section {:?}", section))),
        }
        Ok(())
    }

    /// Apply a dotted `section.key=value` override as given on the command
    /// line.
    pub fn set_path(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment.split_once('=').ok_or_else(|| {
            Error::Argument(format!("override {:?} is not of the form section.key=value", assignment))
        })?;
        let (section, key) = path.trim().split_once('.').ok_or_else(|| {
            Error::Argument(format!("override key {:?} is not of the form section.key", path))
        })?;
        self.set(section.trim(), key.trim(), value.trim())
    }

    /// Parse a configuration text, starting from the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::Argument(format!("line {}: malformed section header {:?}", ln + 1, line))
                })?;
                section = name.trim().to_string();
                if !matches!(
                    section.as_str(),
                    "geometry" | "phantom" | "normal_op" | "solver" | "sweep" | "output"
                ) {
                    return Err(Error::Argument(format!(
                        "line {}: unknown section {:?}",
                        ln + 1,
                        section
                    )));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Argument(format!("line {}: expected key = value, got {:?}", ln + 1, line))
            })?;
            if section.is_empty() {
                return Err(Error::Argument(format!(
                    "line {}: key before any [section] header",
                    ln + 1
                )));
            }
            cfg.set(&section, key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Load from a file.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {}", path.display(), e),
            ))
        })?;
        Self::parse(&text)
    }

    /// Emit the fully resolved configuration; parsing the result yields an
    /// equal configuration.
    pub fn emit(&self) -> String {
        let g = &self.geometry;
        let p = &self.phantom;
        let n = &self.normal_op;
        let s = &self.solver;
        let w = &self.sweep;
        let o = &self.output;
        format!(
            "[geometry]\n\
             metric = {}\n\
             conformal_epsilon = {}\n\
             domain_center = {}\n\
             domain_radius = {}\n\
             extended_radius = {}\n\
             foliation_center = {}\n\
             foliation_offset = {}\n\
             step = {}\n\
             t_max = {}\n\
             \n[phantom]\n\
             kind = {}\n\
             center = {}\n\
             sigma = {}\n\
             amplitude = {}\n\
             separation = {}\n\
             \n[normal_op]\n\
             h = {}\n\
             variant = {}\n\
             cutoff = {}\n\
             n_lambda = {}\n\
             n_theta = {}\n\
             check_damping = {}\n\
             \n[solver]\n\
             tol = {}\n\
             max_iter = {}\n\
             grid_n = {}\n\
             \n[sweep]\n\
             h_values = {}\n\
             \n[output]\n\
             dir = {}\n\
             write_volumes = {}\n",
            g.metric,
            g.conformal_epsilon,
            fmt_v3(&g.domain_center),
            g.domain_radius,
            g.extended_radius,
            fmt_v3(&g.foliation_center),
            g.foliation_offset,
            g.step,
            g.t_max,
            p.kind,
            fmt_v3(&p.center),
            p.sigma,
            p.amplitude,
            p.separation,
            n.h,
            n.variant,
            n.cutoff,
            n.n_lambda,
            n.n_theta,
            n.check_damping,
            s.tol,
            s.max_iter,
            s.grid_n,
            w.h_values
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
            o.dir,
            o.write_volumes,
        )
    }

    /// Short hash of the resolved configuration for run-directory naming.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.emit().as_bytes());
        let digest = hasher.finalize();
        digest
            .iter()
            .take(6)
            .map(|b| format!("{:02x}", b))
            .collect()
    }

    /// Build the geometry this configuration describes.
    pub fn build_geometry(&self) -> Result<GeometrySpec> {
        let g = &self.geometry;
        let metric = match g.metric.as_str() {
            "euclidean" => MetricFamily::Euclidean,
            "conformal" => MetricFamily::Conformal {
                epsilon: g.conformal_epsilon,
                center: g.domain_center,
            },
            other => {
                return Err(Error::Argument(format!(
                    "geometry.metric must be euclidean or conformal, got {:?}",
                    other
                )))
            }
        };
        if g.extended_radius <= g.domain_radius {
            return Err(Error::Argument(
                "geometry.extended_radius must exceed geometry.domain_radius".into(),
            ));
        }
        Ok(GeometrySpec {
            metric,
            foliation: FoliationFamily::SquaredDistance {
                center: g.foliation_center,
                offset: g.foliation_offset,
            },
            domain: Ball::new(g.domain_center, g.domain_radius),
            extended: Ball::new(g.domain_center, g.extended_radius),
            step: g.step,
            t_max: g.t_max,
        })
    }

    /// Build the phantom this configuration describes.
    pub fn build_phantom(&self) -> Result<Phantom> {
        let p = &self.phantom;
        match p.kind.as_str() {
            "gaussian" => Ok(Phantom::gaussian(p.center, p.sigma, p.amplitude)),
            "two_bumps" => {
                let off = V3::new(0.0, p.separation / 2.0, 0.0);
                Ok(Phantom::Bumps(vec![
                    Bump {
                        center: p.center - off,
                        sigma: p.sigma,
                        amplitude: p.amplitude,
                    },
                    Bump {
                        center: p.center + off,
                        sigma: p.sigma,
                        amplitude: p.amplitude,
                    },
                ]))
            }
            "smoothed_ball" => Ok(Phantom::SmoothedBall {
                center: p.center,
                radius: p.separation,
                width: p.sigma,
                amplitude: p.amplitude,
            }),
            other => Err(Error::Argument(format!(
                "phantom.kind must be gaussian, two_bumps or smoothed_ball, got {:?}",
                other
            ))),
        }
    }

    /// Build the localized-operator configuration this file describes.
    pub fn build_normal_op(&self) -> Result<NormalOpConfig> {
        let n = &self.normal_op;
        let variant = match n.variant.as_str() {
            "global" => WeightVariant::Global,
            "scattering" => WeightVariant::Scattering,
            other => {
                return Err(Error::Argument(format!(
                    "normal_op.variant must be global or scattering, got {:?}",
                    other
                )))
            }
        };
        let cutoff = match n.cutoff.as_str() {
            "matched" => CutoffSpec::matched(),
            "adversarial" => CutoffSpec::adversarial(),
            other => {
                return Err(Error::Argument(format!(
                    "normal_op.cutoff must be matched or adversarial, got {:?}",
                    other
                )))
            }
        };
        let mut cfg = NormalOpConfig::new(n.h, variant);
        cfg.cutoff = cutoff;
        cfg.n_lambda = n.n_lambda;
        cfg.n_theta = n.n_theta;
        cfg.check_damping = n.check_damping;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_emit_and_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.emit();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn round_trip_preserves_overrides() {
        let mut cfg = ExperimentConfig::default();
        cfg.set_path("normal_op.h=0.05").unwrap();
        cfg.set_path("geometry.metric=conformal").unwrap();
        cfg.set_path("sweep.h_values=0.4,0.2,0.1").unwrap();
        let back = ExperimentConfig::parse(&cfg.emit()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(back.normal_op.h, 0.05);
        assert_eq!(back.sweep.h_values, vec![0.4, 0.2, 0.1]);
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        assert!(ExperimentConfig::parse("[geometry]\nmetricc = euclidean\n").is_err());
        assert!(ExperimentConfig::parse("[warp]\nspeed = 9\n").is_err());
        assert!(ExperimentConfig::parse("metric = euclidean\n").is_err());
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.set_path("solver.tol").is_err());
        assert!(cfg.set_path("tol=1e-8").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg =
            ExperimentConfig::parse("# comment\n\n[solver]\n tol = 1e-6 \n# more\nmax_iter = 7\n")
                .unwrap();
        assert_eq!(cfg.solver.tol, 1e-6);
        assert_eq!(cfg.solver.max_iter, 7);
    }

    #[test]
    fn hash_distinguishes_configs() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.set_path("normal_op.h=0.2").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 12);
    }

    #[test]
    fn builders_validate_enums() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.build_geometry().is_ok());
        assert!(cfg.build_phantom().is_ok());
        assert!(cfg.build_normal_op().is_ok());
        cfg.set_path("geometry.metric=hyperbolic").unwrap();
        assert!(cfg.build_geometry().is_err());
    }
}
