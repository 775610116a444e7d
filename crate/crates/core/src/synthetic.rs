//! Labelled synthetic forest plots: cylinder stems, ellipsoid crowns,
//! undulating terrain and coarse woody debris.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{InstanceId, LabeledCloud, Point, SemanticLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub trees: usize,
    /// Minimum horizontal gap between neighbouring crowns.
    pub crown_gap: f64,
    pub tree_height: (f64, f64),
    pub stem_radius: (f64, f64),
    pub crown_radius: (f64, f64),
    /// Height of the lowest crown point above the ground.
    pub crown_base: (f64, f64),
    /// Points per square meter of bark.
    pub stem_density: f64,
    /// Points per cubic meter of crown.
    pub crown_density: f64,
    pub terrain_spacing: f64,
    pub terrain_slope: f64,
    pub cwd_pieces: usize,
    /// Uniform positional noise amplitude.
    pub jitter: f64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 10,
            crown_gap: 2.0,
            tree_height: (12.0, 18.0),
            stem_radius: (0.12, 0.25),
            crown_radius: (1.5, 2.5),
            crown_base: (4.0, 7.0),
            stem_density: 300.0,
            crown_density: 30.0,
            terrain_spacing: 0.25,
            terrain_slope: 0.05,
            cwd_pieces: 3,
            jitter: 0.01,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, (lo, hi): (f64, f64)| {
            if lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{name} range ({lo}, {hi}) is invalid"
                )))
            }
        };
        range("tree_height", self.tree_height)?;
        range("stem_radius", self.stem_radius)?;
        range("crown_radius", self.crown_radius)?;
        range("crown_base", self.crown_base)?;
        if self.trees == 0 {
            return Err(Error::InvalidArgument(
                "a forest needs at least one tree".into(),
            ));
        }
        if self.crown_base.1 >= self.tree_height.0 {
            return Err(Error::InvalidArgument(
                "crowns must start below the tree tops".into(),
            ));
        }
        for (name, v) in [
            ("stem_density", self.stem_density),
            ("crown_density", self.crown_density),
            ("terrain_spacing", self.terrain_spacing),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.crown_gap.is_finite()
            && self.crown_gap >= 0.0
            && self.jitter >= 0.0
            && self.terrain_slope.is_finite())
        {
            return Err(Error::InvalidArgument(
                "crown_gap, jitter and terrain_slope must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTree {
    pub id: InstanceId,
    /// Stem foot on the terrain.
    pub base: Point,
    pub height: f64,
    pub stem_radius: f64,
    pub crown_radius: f64,
    pub crown_base: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticForest {
    pub cloud: LabeledCloud,
    pub trees: Vec<SyntheticTree>,
    /// Side length of the square plot.
    pub extent: f64,
}

fn terrain(slope: f64, x: f64, y: f64) -> f64 {
    slope * x + 0.3 * (x / 5.0).sin() * (y / 7.0).cos()
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

struct Builder {
    points: Vec<Point>,
    semantic: Vec<SemanticLabel>,
    instance: Vec<Option<InstanceId>>,
    jitter: f64,
}

impl Builder {
    fn push(&mut self, rng: &mut ChaCha8Rng, p: Point, s: SemanticLabel, id: Option<InstanceId>) {
        let j = self.jitter;
        let p = if j > 0.0 {
            p.offset(
                rng.random_range(-j..=j),
                rng.random_range(-j..=j),
                rng.random_range(-j..=j),
            )
        } else {
            p
        };
        self.points.push(p);
        self.semantic.push(s);
        self.instance.push(id);
    }
}

fn place_trees(cfg: &ForestConfig, rng: &mut ChaCha8Rng) -> (Vec<(f64, f64, f64)>, f64) {
    let cell = 2.0 * cfg.crown_radius.1 + cfg.crown_gap;
    let mut extent = (cfg.trees as f64 * cell * cell * 1.6).sqrt().max(cell);
    loop {
        let mut placed: Vec<(f64, f64, f64)> = Vec::with_capacity(cfg.trees);
        'trees: for _ in 0..cfg.trees {
            let r = uniform(rng, cfg.crown_radius);
            for _ in 0..5000 {
                let x = rng.random_range(r..=(extent - r).max(r));
                let y = rng.random_range(r..=(extent - r).max(r));
                let ok = placed.iter().all(|&(px, py, pr)| {
                    let d = ((x - px).powi(2) + (y - py).powi(2)).sqrt();
                    d >= r + pr + cfg.crown_gap
                });
                if ok {
                    placed.push((x, y, r));
                    continue 'trees;
                }
            }
            break;
        }
        if placed.len() == cfg.trees {
            return (placed, extent);
        }
        extent *= 1.15;
    }
}

/// Generates one plot. Tree ids follow placement order from 0; terrain
/// and debris carry no instance.
pub fn generate_forest(cfg: &ForestConfig, seed: u64) -> Result<SyntheticForest> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (spots, extent) = place_trees(cfg, &mut rng);
    let mut b = Builder {
        points: Vec::new(),
        semantic: Vec::new(),
        instance: Vec::new(),
        jitter: cfg.jitter,
    };
    let slope = cfg.terrain_slope;

    let mut trees = Vec::with_capacity(spots.len());
    for (i, &(x, y, crown_radius)) in spots.iter().enumerate() {
        let id = i as InstanceId;
        let height = uniform(&mut rng, cfg.tree_height);
        let r0 = uniform(&mut rng, cfg.stem_radius);
        let crown_base = uniform(&mut rng, cfg.crown_base);
        let z0 = terrain(slope, x, y);

        // Linearly tapering stem up to the top; rejection keeps the bark
        // density uniform.
        let taper = 0.7;
        let area = 2.0 * PI * r0 * height * (1.0 - taper / 2.0);
        let n_stem = (cfg.stem_density * area).round() as usize;
        let mut made = 0;
        while made < n_stem {
            let h = rng.random_range(0.0..height);
            let scale = 1.0 - taper * h / height;
            if rng.random::<f64>() > scale {
                continue;
            }
            let a = rng.random_range(0.0..2.0 * PI);
            let r = r0 * scale;
            b.push(
                &mut rng,
                Point::new(x + r * a.cos(), y + r * a.sin(), z0 + h),
                SemanticLabel::Stem,
                Some(id),
            );
            made += 1;
        }

        let half_depth = (height - crown_base) / 2.0;
        let cz = z0 + crown_base + half_depth;
        let volume = 4.0 / 3.0 * PI * crown_radius * crown_radius * half_depth;
        let n_crown = (cfg.crown_density * volume).round() as usize;
        let mut made = 0;
        while made < n_crown {
            let u = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0f64),
            ];
            if u.iter().map(|v| v * v).sum::<f64>() > 1.0 {
                continue;
            }
            let p = Point::new(
                x + crown_radius * u[0],
                y + crown_radius * u[1],
                cz + half_depth * u[2],
            );
            b.push(&mut rng, p, SemanticLabel::Vegetation, Some(id));
            made += 1;
        }
        trees.push(SyntheticTree {
            id,
            base: Point::new(x, y, z0),
            height,
            stem_radius: r0,
            crown_radius,
            crown_base,
        });
    }

    let steps = (extent / cfg.terrain_spacing).ceil() as usize;
    for i in 0..=steps {
        for j in 0..=steps {
            let (x, y) = (
                i as f64 * cfg.terrain_spacing,
                j as f64 * cfg.terrain_spacing,
            );
            b.push(
                &mut rng,
                Point::new(x, y, terrain(slope, x, y)),
                SemanticLabel::Terrain,
                None,
            );
        }
    }

    // Logs lying on the ground, kept clear of the stems.
    for _ in 0..cfg.cwd_pieces {
        let len = rng.random_range(2.0..4.0);
        let r = rng.random_range(0.08..0.15);
        let a = rng.random_range(0.0..PI);
        let (dx, dy) = (a.cos(), a.sin());
        let mut start = None;
        for _ in 0..1000 {
            let x = rng.random_range(0.0..extent);
            let y = rng.random_range(0.0..extent);
            let clear = spots.iter().all(|&(px, py, _)| {
                let t = ((px - x) * dx + (py - y) * dy).clamp(0.0, len);
                ((x + t * dx - px).powi(2) + (y + t * dy - py).powi(2)).sqrt() > 1.0
            });
            if clear {
                start = Some((x, y));
                break;
            }
        }
        let Some((x, y)) = start else { continue };
        let n = (cfg.stem_density * 2.0 * PI * r * len * 0.5).round() as usize;
        for _ in 0..n {
            let t = rng.random_range(0.0..len);
            let phi = rng.random_range(0.0..PI);
            let (px, py) = (x + t * dx, y + t * dy);
            let ground = terrain(slope, px, py);
            let p = Point::new(
                px - r * phi.cos() * dy,
                py + r * phi.cos() * dx,
                ground + r + r * phi.sin(),
            );
            b.push(&mut rng, p, SemanticLabel::Cwd, None);
        }
    }

    let cloud = LabeledCloud::new(b.points)?
        .with_semantic(b.semantic)?
        .with_instance(b.instance)?;
    Ok(SyntheticForest {
        cloud,
        trees,
        extent,
    })
}

/// `plots` forests named `plot_00`, `plot_01`, ...; plot `k` uses seed
/// `seed + k` and a tree count drawn from `trees`.
pub fn generate_dataset(
    cfg: &ForestConfig,
    trees: (usize, usize),
    plots: usize,
    seed: u64,
) -> Result<Vec<(String, SyntheticForest)>> {
    if trees.0 == 0 || trees.0 > trees.1 {
        return Err(Error::InvalidArgument(format!(
            "tree count range {trees:?} is invalid"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..plots)
        .map(|k| {
            let n = rng.random_range(trees.0..=trees.1);
            let forest = generate_forest(
                &ForestConfig {
                    trees: n,
                    ..cfg.clone()
                },
                seed.wrapping_add(k as u64),
            )?;
            Ok((format!("plot_{k:02}"), forest))
        })
        .collect()
}
