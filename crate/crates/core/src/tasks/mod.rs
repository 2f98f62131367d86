//! Registered benchmark tasks: boundary distributions, state costs and
//! per-task hyperparameters.

mod terrain;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use terrain::{load_point_cloud, save_point_cloud, synth_terrain, terrain_height};

use crate::batch::StateBatch;
use crate::condsoc::SplineOptConfig;
use crate::optim::OptimizerKind;
use crate::rng::Rng;
use crate::state_costs::{Interaction, LidarCost, MeanFieldCost, Obstacle, ObstacleField, PointCloud, Population, SumCost};
use crate::{GsbmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskName {
    Stunnel,
    Vneck,
    Gmm,
    Lidar,
    Opinion,
    Spider,
}

impl TaskName {
    pub const ALL: [TaskName; 6] = [
        TaskName::Stunnel,
        TaskName::Vneck,
        TaskName::Gmm,
        TaskName::Lidar,
        TaskName::Opinion,
        TaskName::Spider,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::Stunnel => "stunnel",
            TaskName::Vneck => "vneck",
            TaskName::Gmm => "gmm",
            TaskName::Lidar => "lidar",
            TaskName::Opinion => "opinion",
            TaskName::Spider => "spider",
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskName {
    type Err = GsbmError;

    fn from_str(s: &str) -> Result<Self> {
        TaskName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| GsbmError::UnknownTask(s.to_string()))
    }
}

/// Isotropic Gaussian component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mean: Vec<f64>,
    pub std: f64,
    pub weight: f64,
}

/// Equal- or weighted-mode isotropic Gaussian mixture used as a boundary
/// distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub components: Vec<Component>,
}

impl GaussianMixture {
    pub fn gaussian(mean: Vec<f64>, std: f64) -> Self {
        GaussianMixture {
            components: vec![Component { mean, std, weight: 1.0 }],
        }
    }

    pub fn equal(means: Vec<Vec<f64>>, std: f64) -> Self {
        let w = 1.0 / means.len() as f64;
        GaussianMixture {
            components: means.into_iter().map(|mean| Component { mean, std, weight: w }).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> StateBatch {
        let d = self.dim();
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        let mut out = StateBatch::zeros(n, d);
        for i in 0..n {
            let mut u = rng.gen::<f64>() * total;
            let comp = self
                .components
                .iter()
                .find(|c| {
                    u -= c.weight;
                    u <= 0.0
                })
                .unwrap_or(self.components.last().expect("non-empty mixture"));
            for (x, m) in out.row_mut(i).iter_mut().zip(&comp.mean) {
                let z: f64 = rng.sample(StandardNormal);
                *x = m + comp.std * z;
            }
        }
        out
    }

    pub fn mean(&self) -> Vec<f64> {
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        let mut m = vec![0.0; self.dim()];
        for c in &self.components {
            for (a, b) in m.iter_mut().zip(&c.mean) {
                *a += c.weight / total * b;
            }
        }
        m
    }

    /// Full covariance, row-major `d × d`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim();
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        let m = self.mean();
        let mut cov = vec![0.0; d * d];
        for c in &self.components {
            let w = c.weight / total;
            for i in 0..d {
                cov[i * d + i] += w * c.std * c.std;
                for j in 0..d {
                    cov[i * d + j] += w * (c.mean[i] - m[i]) * (c.mean[j] - m[j]);
                }
            }
        }
        cov
    }
}

/// A narrow passage whose crossings are counted: the segment
/// `x = gate_x, |y − center| < half_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub gate_x: f64,
    pub center: f64,
    pub half_width: f64,
}

/// How the interaction part of `V` is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionSpec {
    pub kind: Interaction,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseDrift {
    Polarize,
}

/// User overrides applied on top of the registered defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskOverrides {
    pub sigma: Option<f64>,
    pub dim: Option<usize>,
    pub knots: Option<usize>,
    pub spline_steps: Option<usize>,
    pub n_steps: Option<usize>,
    pub pairs: Option<usize>,
    pub hidden: Option<usize>,
    pub lambda_obs: Option<f64>,
    pub lambda_int: Option<f64>,
    pub point_cloud: Option<PathBuf>,
    pub terrain_points: Option<usize>,
}

/// Fully resolved task.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub name: TaskName,
    pub dim: usize,
    pub sigma: f64,
    pub source: GaussianMixture,
    pub target: GaussianMixture,
    pub obstacles: Option<ObstacleField>,
    pub interaction: Option<InteractionSpec>,
    pub lidar: Option<Arc<PointCloud>>,
    pub lidar_lambda: f64,
    pub base_drift: Option<BaseDrift>,
    pub corridor: Option<Corridor>,
    pub knots: usize,
    pub spline: SplineOptConfig,
    /// Amplitudes (relative to the pair distance) of sideways detours tried
    /// as extra CondSOC initializations.
    pub detours: Vec<f64>,
    pub n_steps: usize,
    pub pairs: usize,
    pub hidden: usize,
}

impl TaskSpec {
    pub fn lambda_obs(&self) -> Option<f64> {
        self.obstacles.as_ref().map(|o| o.lambda)
    }

    pub fn lambda_int(&self) -> Option<f64> {
        self.interaction.map(|i| i.lambda)
    }

    pub fn needs_population(&self) -> bool {
        self.interaction.is_some() || self.base_drift.is_some()
    }

    /// `V_t`; mean-field terms read the given population and are dropped
    /// when it is `None`.
    pub fn state_cost(&self, population: Option<&Arc<Population>>) -> SumCost {
        let mut v = SumCost::new();
        if let Some(o) = &self.obstacles {
            v.push(Arc::new(o.clone()));
        }
        if let (Some(i), Some(pop)) = (self.interaction, population) {
            v.push(Arc::new(MeanFieldCost {
                interaction: i.kind,
                lambda: i.lambda,
                population: pop.clone(),
            }));
        }
        if let Some(cloud) = &self.lidar {
            v.push(Arc::new(LidarCost::new(cloud.clone(), self.lidar_lambda)));
        }
        v
    }

    /// Geometry and boundary description for plotting tools.
    pub fn geometry_json(&self) -> serde_json::Value {
        serde_json::json!({
            "task": self.name.as_str(),
            "dim": self.dim,
            "sigma": self.sigma,
            "source": self.source,
            "target": self.target,
            "obstacles": self.obstacles.as_ref().map(|o| &o.obstacles),
            "corridor": self.corridor,
            "point_cloud_size": self.lidar.as_ref().map(|c| c.len()),
        })
    }
}

pub fn list_tasks() -> Vec<&'static str> {
    TaskName::ALL.iter().map(|t| t.as_str()).collect()
}

fn spline_cfg(steps: usize, optimizer: OptimizerKind) -> SplineOptConfig {
    SplineOptConfig {
        steps,
        optimizer,
        ..SplineOptConfig::default()
    }
}

const STUNNEL_ELLIPSE_RADII: [f64; 2] = [2.1213203435596424, 9.486832980505138];

/// Builds a task with its registered defaults, then applies `overrides`.
pub fn make_task(name: TaskName, overrides: &TaskOverrides) -> Result<TaskSpec> {
    let mut spec = match name {
        TaskName::Stunnel => TaskSpec {
            name,
            dim: 2,
            sigma: 1.0,
            source: GaussianMixture::gaussian(vec![-11.0, -1.0], 0.5f64.sqrt()),
            target: GaussianMixture::gaussian(vec![11.0, 1.0], 0.5f64.sqrt()),
            obstacles: Some(ObstacleField::new(
                vec![
                    Obstacle::Ellipse {
                        center: [5.0, 6.0],
                        radii: STUNNEL_ELLIPSE_RADII,
                    },
                    Obstacle::Ellipse {
                        center: [-5.0, -6.0],
                        radii: STUNNEL_ELLIPSE_RADII,
                    },
                ],
                1500.0,
            )),
            interaction: Some(InteractionSpec {
                kind: Interaction::Congestion,
                lambda: 50.0,
            }),
            lidar: None,
            lidar_lambda: 0.0,
            base_drift: None,
            corridor: None,
            knots: 30,
            spline: spline_cfg(1000, OptimizerKind::Sgd),
            detours: Vec::new(),
            n_steps: 1000,
            pairs: 2048,
            hidden: 128,
        },
        TaskName::Vneck => TaskSpec {
            name,
            dim: 2,
            sigma: 1.0,
            source: GaussianMixture::gaussian(vec![-7.0, 0.0], 0.2f64.sqrt()),
            target: GaussianMixture::gaussian(vec![7.0, 0.0], 0.2f64.sqrt()),
            obstacles: Some(ObstacleField::new(vec![Obstacle::HyperbolicNeck { c_sq: 0.36, coef: 5.0 }], 3000.0)),
            interaction: Some(InteractionSpec {
                kind: Interaction::Entropy,
                lambda: 8.0,
            }),
            lidar: None,
            lidar_lambda: 0.0,
            base_drift: None,
            corridor: None,
            knots: 30,
            spline: spline_cfg(3000, OptimizerKind::Sgd),
            detours: Vec::new(),
            n_steps: 1000,
            pairs: 2048,
            hidden: 128,
        },
        TaskName::Gmm => TaskSpec {
            name,
            dim: 2,
            sigma: 1.0,
            source: GaussianMixture::gaussian(vec![-14.0, 0.0], 1.0),
            target: GaussianMixture::equal(vec![vec![14.0, -8.0], vec![14.0, 0.0], vec![14.0, 8.0]], 1.0),
            obstacles: Some(ObstacleField::new(
                vec![
                    Obstacle::Circle {
                        center: [0.0, 6.0],
                        radius: 3.0,
                    },
                    Obstacle::Circle {
                        center: [0.0, -6.0],
                        radius: 3.0,
                    },
                    Obstacle::Circle {
                        center: [6.0, 0.0],
                        radius: 2.0,
                    },
                ],
                1500.0,
            )),
            interaction: Some(InteractionSpec {
                kind: Interaction::Congestion,
                lambda: 5.0,
            }),
            lidar: None,
            lidar_lambda: 0.0,
            base_drift: None,
            corridor: None,
            knots: 30,
            spline: spline_cfg(2000, OptimizerKind::Sgd),
            detours: Vec::new(),
            n_steps: 1000,
            pairs: 2048,
            hidden: 128,
        },
        TaskName::Lidar => TaskSpec {
            name,
            dim: 3,
            sigma: 1.0,
            source: GaussianMixture::gaussian(vec![-3.5, -3.5, terrain_height(-3.5, -3.5)], 0.3),
            target: GaussianMixture::gaussian(vec![3.5, 3.5, terrain_height(3.5, 3.5)], 0.3),
            obstacles: None,
            interaction: None,
            lidar: None,
            lidar_lambda: crate::state_costs::LIDAR_LAMBDA,
            base_drift: None,
            corridor: None,
            knots: 30,
            spline: spline_cfg(200, OptimizerKind::momentum()),
            detours: Vec::new(),
            n_steps: 1000,
            pairs: 2048,
            hidden: 128,
        },
        TaskName::Opinion => {
            let d = overrides.dim.unwrap_or(100);
            TaskSpec {
                name,
                dim: d,
                sigma: 0.5,
                source: GaussianMixture::gaussian(vec![0.0; d], 0.5),
                target: GaussianMixture::gaussian(vec![0.0; d], 3f64.sqrt()),
                obstacles: None,
                interaction: Some(InteractionSpec {
                    kind: Interaction::Congestion,
                    lambda: 1.0,
                }),
                lidar: None,
                lidar_lambda: 0.0,
                base_drift: Some(BaseDrift::Polarize),
                corridor: None,
                knots: 30,
                spline: spline_cfg(700, OptimizerKind::Sgd),
                detours: Vec::new(),
                n_steps: 300,
                pairs: 512,
                hidden: 256,
            }
        }
        TaskName::Spider => TaskSpec {
            name,
            dim: 2,
            sigma: 1.0,
            source: GaussianMixture::gaussian(vec![-3.0, 0.0], 0.2),
            target: GaussianMixture::gaussian(vec![3.0, 0.0], 0.2),
            obstacles: Some(ObstacleField::new(
                vec![
                    Obstacle::Rect {
                        min: [-1.0, 0.25],
                        max: [1.0, 2.0],
                    },
                    Obstacle::Rect {
                        min: [-1.0, -2.0],
                        max: [1.0, -0.25],
                    },
                ],
                1500.0,
            )),
            interaction: None,
            lidar: None,
            lidar_lambda: 0.0,
            base_drift: None,
            corridor: Some(Corridor {
                gate_x: 0.0,
                center: 0.0,
                half_width: 0.25,
            }),
            knots: 30,
            // the corridor walls are steep enough that larger steps throw a
            // centred path out of the corridor
            spline: SplineOptConfig {
                learning_rate: 0.002,
                ..spline_cfg(1000, OptimizerKind::Sgd)
            },
            detours: vec![-0.6, 0.6],
            n_steps: 1000,
            pairs: 2048,
            hidden: 128,
        },
    };

    let o = overrides;
    if let Some(s) = o.sigma {
        if !(s >= 0.0) {
            return Err(GsbmError::Config(format!("sigma must be non-negative, got {s}")));
        }
        spec.sigma = s;
    }
    if o.dim.is_some() && name != TaskName::Opinion {
        return Err(GsbmError::Config(format!("task {name} has a fixed dimension")));
    }
    if let Some(k) = o.knots {
        spec.knots = k;
    }
    if let Some(m) = o.spline_steps {
        spec.spline.steps = m;
    }
    if let Some(n) = o.n_steps {
        spec.n_steps = n;
    }
    if let Some(p) = o.pairs {
        spec.pairs = p;
    }
    if let Some(h) = o.hidden {
        spec.hidden = h;
    }
    if let Some(l) = o.lambda_obs {
        match spec.obstacles.as_mut() {
            Some(f) => f.lambda = l,
            None => return Err(GsbmError::Config(format!("task {name} has no obstacles"))),
        }
    }
    if let Some(l) = o.lambda_int {
        match spec.interaction.as_mut() {
            Some(i) => i.lambda = l,
            None => return Err(GsbmError::Config(format!("task {name} has no interaction cost"))),
        }
    }
    if name == TaskName::Lidar {
        let cloud = match &o.point_cloud {
            Some(p) => load_point_cloud(p)?,
            None => synth_terrain(0, o.terrain_points.unwrap_or(20_000))?,
        };
        spec.lidar = Some(Arc::new(cloud));
    } else if o.point_cloud.is_some() || o.terrain_points.is_some() {
        return Err(GsbmError::Config(format!("task {name} does not use a point cloud")));
    }
    if spec.knots == 0 || spec.n_steps == 0 || spec.pairs == 0 || spec.hidden == 0 {
        return Err(GsbmError::Config("knots, n_steps, pairs and hidden must be positive".into()));
    }
    spec.spline.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn names_round_trip() {
        for t in TaskName::ALL {
            assert_eq!(t.as_str().parse::<TaskName>().unwrap(), t);
        }
        assert!(matches!("afhq".parse::<TaskName>(), Err(GsbmError::UnknownTask(_))));
    }

    #[test]
    fn mixture_moments() {
        let m = GaussianMixture::equal(vec![vec![-2.0, 0.0], vec![2.0, 0.0]], 0.5);
        assert_eq!(m.mean(), vec![0.0, 0.0]);
        let c = m.covariance();
        assert!((c[0] - 4.25).abs() < 1e-12 && (c[3] - 0.25).abs() < 1e-12 && c[1] == 0.0);
        let s = m.sample(10, &mut rng_from_seed(1));
        assert_eq!(s.len(), 10);
        assert!(s.all_finite());
    }

    #[test]
    fn overrides_are_checked() {
        let o = TaskOverrides {
            dim: Some(3),
            ..Default::default()
        };
        assert!(make_task(TaskName::Stunnel, &o).is_err());
        let o = TaskOverrides {
            lambda_int: Some(1.0),
            ..Default::default()
        };
        assert!(make_task(TaskName::Spider, &o).is_err());
        let o = TaskOverrides {
            sigma: Some(2.0),
            pairs: Some(64),
            ..Default::default()
        };
        let t = make_task(TaskName::Vneck, &o).unwrap();
        assert_eq!((t.sigma, t.pairs), (2.0, 64));
    }

    #[test]
    fn registered_defaults() {
        let cases = [
            (TaskName::Stunnel, 2, 1.0, 1000, Some(1500.0), Some(50.0)),
            (TaskName::Vneck, 2, 1.0, 3000, Some(3000.0), Some(8.0)),
            (TaskName::Gmm, 2, 1.0, 2000, Some(1500.0), Some(5.0)),
            (TaskName::Opinion, 100, 0.5, 700, None, Some(1.0)),
            (TaskName::Spider, 2, 1.0, 1000, Some(1500.0), None),
        ];
        for (name, dim, sigma, steps, obs, int) in cases {
            let t = make_task(name, &TaskOverrides::default()).unwrap();
            assert_eq!((t.dim, t.sigma, t.spline.steps), (dim, sigma, steps), "{name}");
            assert_eq!((t.lambda_obs(), t.lambda_int()), (obs, int), "{name}");
            assert_eq!(t.source.dim(), dim);
            assert_eq!(t.target.dim(), dim);
        }
        let o = TaskOverrides {
            terrain_points: Some(2000),
            ..Default::default()
        };
        let lidar = make_task(TaskName::Lidar, &o).unwrap();
        assert_eq!(lidar.spline.steps, 200);
        assert_eq!(lidar.lidar.as_ref().unwrap().len(), 2000);
        assert_eq!(lidar.lidar_lambda, crate::state_costs::LIDAR_LAMBDA);
        let small = make_task(TaskName::Opinion, &TaskOverrides { dim: Some(4), ..Default::default() }).unwrap();
        assert_eq!(small.source.mean(), vec![0.0; 4]);
        assert_eq!(small.base_drift, Some(BaseDrift::Polarize));
    }

    #[test]
    fn boundary_moments_match_registry() {
        let t = make_task(TaskName::Stunnel, &TaskOverrides::default()).unwrap();
        let x = t.source.sample(20_000, &mut rng_from_seed(2));
        let m = x.mean();
        assert!((m[0] + 11.0).abs() < 0.03 && (m[1] + 1.0).abs() < 0.03, "{m:?}");
        let var: f64 = x.rows().map(|r| (r[0] - m[0]).powi(2)).sum::<f64>() / x.len() as f64;
        assert!((var - 0.5).abs() < 0.03, "{var}");
        let g = make_task(TaskName::Gmm, &TaskOverrides::default()).unwrap();
        let c = g.target.covariance();
        assert!((c[3] - (1.0 + 128.0 / 3.0)).abs() < 1e-9);
    }
}
