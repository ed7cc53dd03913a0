use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{PoseSE3, Vec3};
use crate::sensing::{parse_fields, PointCloud};
use crate::{Error, Result};

const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Surface {
    /// Axis-aligned box. Seen from outside it is a solid obstacle; from inside, a room.
    Box { center: Vec3, size: Vec3 },
    /// Rectangular patch of a plane with half-extents along two in-plane axes.
    Plane {
        center: Vec3,
        normal: Vec3,
        half_u: f64,
        half_v: f64,
    },
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }
}

fn plane_axes(normal: &Vec3) -> (Vec3, Vec3) {
    let n = normal.normalize();
    let u = if n.z.abs() > 0.999 {
        Vec3::x()
    } else {
        n.cross(&Vec3::z()).normalize()
    };
    let v = n.cross(&u);
    (u, v)
}

impl Surface {
    pub fn bounds(&self) -> Aabb {
        match self {
            Surface::Box { center, size } => Aabb {
                min: center - size / 2.0,
                max: center + size / 2.0,
            },
            Surface::Plane {
                center,
                normal,
                half_u,
                half_v,
            } => {
                let (u, v) = plane_axes(normal);
                let ext = u.abs() * *half_u + v.abs() * *half_v;
                Aabb {
                    min: center - ext,
                    max: center + ext,
                }
            }
        }
    }

    /// Distance along the unit ray to the first hit in front of the origin.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        match self {
            Surface::Box { center, size } => {
                let lo = center - size / 2.0;
                let hi = center + size / 2.0;
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for i in 0..3 {
                    if dir[i].abs() < 1e-15 {
                        if origin[i] < lo[i] || origin[i] > hi[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (lo[i] - origin[i]) / dir[i];
                    let b = (hi[i] - origin[i]) / dir[i];
                    t_near = t_near.max(a.min(b));
                    t_far = t_far.min(a.max(b));
                }
                if t_near > t_far {
                    None
                } else if t_near > HIT_EPS {
                    Some(t_near)
                } else if t_far > HIT_EPS {
                    Some(t_far)
                } else {
                    None
                }
            }
            Surface::Plane {
                center,
                normal,
                half_u,
                half_v,
            } => {
                let n = normal.normalize();
                let denom = dir.dot(&n);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = (center - origin).dot(&n) / denom;
                if t <= HIT_EPS {
                    return None;
                }
                let (u, v) = plane_axes(normal);
                let local = origin + dir * t - center;
                (local.dot(&u).abs() <= *half_u && local.dot(&v).abs() <= *half_v).then_some(t)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WorldModel {
    pub surfaces: Vec<Surface>,
}

impl WorldModel {
    pub fn new(surfaces: Vec<Surface>) -> Result<Self> {
        let w = Self { surfaces };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.surfaces.is_empty() {
            return Err(Error::InvalidInput("world has no surfaces".into()));
        }
        for s in &self.surfaces {
            let finite = match s {
                Surface::Box { center, size } => {
                    center.iter().chain(size.iter()).all(|v| v.is_finite()) && size.iter().all(|&v| v > 0.0)
                }
                Surface::Plane {
                    center,
                    normal,
                    half_u,
                    half_v,
                } => {
                    center.iter().all(|v| v.is_finite())
                        && normal.norm() > 0.0
                        && normal.iter().all(|v| v.is_finite())
                        && *half_u > 0.0
                        && *half_v > 0.0
                }
            };
            if !finite {
                return Err(Error::InvalidInput(format!("invalid surface {s:?}")));
            }
        }
        Ok(())
    }

    /// Bounding box of every surface, `None` for an empty world.
    pub fn bounds(&self) -> Option<Aabb> {
        self.surfaces.iter().map(Surface::bounds).reduce(|a, b| a.union(&b))
    }

    /// An `sx × sy × sz` room with its floor at z = 0, centred on the origin in x and y,
    /// furnished with a few pillars and crates so scans have corners to lock onto.
    pub fn furnished_room(sx: f64, sy: f64, sz: f64) -> Self {
        let mut surfaces = vec![Surface::Box {
            center: Vec3::new(0.0, 0.0, sz / 2.0),
            size: Vec3::new(sx, sy, sz),
        }];
        let items = [
            (Vec3::new(0.3 * sx, 0.25 * sy, 0.5 * sz), Vec3::new(0.4, 0.4, sz)),
            (Vec3::new(0.32 * sx, -0.3 * sy, 0.4), Vec3::new(0.8, 0.6, 0.8)),
            (Vec3::new(-0.3 * sx, 0.3 * sy, 0.6), Vec3::new(0.6, 1.0, 1.2)),
            (Vec3::new(-0.35 * sx, -0.25 * sy, 0.5 * sz), Vec3::new(0.5, 0.5, sz)),
            (Vec3::new(0.42 * sx, 0.0, 1.0), Vec3::new(0.3, 1.2, 2.0)),
        ];
        for (center, size) in items {
            surfaces.push(Surface::Box { center, size });
        }
        Self { surfaces }
    }

    /// One surface per line: `box cx cy cz sx sy sz` or `plane cx cy cz nx ny nz half_u half_v`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut surfaces = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (kind, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let v = parse_fields(rest, path, ln + 1)?;
            let s = match (kind, v.len()) {
                ("box", 6) => Surface::Box {
                    center: Vec3::new(v[0], v[1], v[2]),
                    size: Vec3::new(v[3], v[4], v[5]),
                },
                ("plane", 8) => Surface::Plane {
                    center: Vec3::new(v[0], v[1], v[2]),
                    normal: Vec3::new(v[3], v[4], v[5]),
                    half_u: v[6],
                    half_v: v[7],
                },
                _ => {
                    return Err(Error::parse(
                        path,
                        ln + 1,
                        format!("expected `box` with 6 numbers or `plane` with 8, got {kind:?} with {}", v.len()),
                    ))
                }
            };
            surfaces.push(s);
        }
        let w = Self { surfaces };
        w.validate().map_err(|e| Error::parse(path, 0, e.to_string()))?;
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.surfaces {
            match s {
                Surface::Box { center: c, size: z } => {
                    writeln!(out, "box {} {} {} {} {} {}", c.x, c.y, c.z, z.x, z.y, z.z)
                }
                Surface::Plane {
                    center: c,
                    normal: n,
                    half_u,
                    half_v,
                } => writeln!(out, "plane {} {} {} {} {} {} {} {}", c.x, c.y, c.z, n.x, n.y, n.z, half_u, half_v),
            }
            .expect("write to string");
        }
        out
    }

    /// Nearest hit distance along a unit ray.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        self.surfaces
            .iter()
            .filter_map(|s| s.intersect(origin, dir))
            .min_by(|a, b| a.total_cmp(b))
    }
}

/// Ray grid of a scanning sensor looking along its +x axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPattern {
    pub n_az: usize,
    pub n_el: usize,
    pub h_fov: f64,
    pub v_fov: f64,
    pub max_range: f64,
}

impl Default for ScanPattern {
    /// 64 × 16 = 1024 rays over 120° × 60°, 10 m range.
    fn default() -> Self {
        Self {
            n_az: 64,
            n_el: 16,
            h_fov: 120f64.to_radians(),
            v_fov: 60f64.to_radians(),
            max_range: 10.0,
        }
    }
}

impl ScanPattern {
    /// Unit ray directions in the sensor frame, elevation-major, bin centres.
    pub fn directions(&self) -> Vec<Vec3> {
        self.directions_with(|| (0.5, 0.5))
    }

    /// Like [`directions`](Self::directions) but each ray is placed uniformly at random
    /// inside its angular bin.
    pub fn directions_jittered<R: Rng>(&self, rng: &mut R) -> Vec<Vec3> {
        self.directions_with(|| (rng.random::<f64>(), rng.random::<f64>()))
    }

    fn directions_with(&self, mut offset: impl FnMut() -> (f64, f64)) -> Vec<Vec3> {
        let mut dirs = Vec::with_capacity(self.n_az * self.n_el);
        for e in 0..self.n_el {
            for a in 0..self.n_az {
                let (oe, oa) = offset();
                let el = -self.v_fov / 2.0 + (e as f64 + oe) * self.v_fov / self.n_el as f64;
                let az = -self.h_fov / 2.0 + (a as f64 + oa) * self.h_fov / self.n_az as f64;
                dirs.push(Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
            }
        }
        dirs
    }
}

/// Cast every ray of `pattern` from `pose`, returning hits in the sensor frame in ray order.
pub fn raycast_scan(world: &WorldModel, pose: &PoseSE3, pattern: &ScanPattern, timestamp: f64) -> Result<PointCloud> {
    cast_rays(world, pose, pattern, pattern.directions(), timestamp)
}

/// [`raycast_scan`] with every ray jittered inside its bin, seeded.
pub fn raycast_scan_jittered(
    world: &WorldModel,
    pose: &PoseSE3,
    pattern: &ScanPattern,
    timestamp: f64,
    seed: u64,
) -> Result<PointCloud> {
    let dirs = pattern.directions_jittered(&mut ChaCha8Rng::seed_from_u64(seed));
    cast_rays(world, pose, pattern, dirs, timestamp)
}

fn cast_rays(world: &WorldModel, pose: &PoseSE3, pattern: &ScanPattern, dirs: Vec<Vec3>, timestamp: f64) -> Result<PointCloud> {
    if let Some(b) = world.bounds() {
        if !b.contains(&pose.translation) {
            return Err(Error::OutOfBounds(format!(
                "sensor at {:?} outside {:?}..{:?}",
                pose.translation, b.min, b.max
            )));
        }
    }
    let origin = pose.translation;
    let points = dirs
        .into_iter()
        .filter_map(|d| {
            let world_dir = &pose.rotation * &d;
            world
                .cast(&origin, &world_dir)
                .filter(|&t| t <= pattern.max_range)
                .map(|t| d * t)
        })
        .collect();
    Ok(PointCloud::new(points, timestamp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EulerAngles;

    #[test]
    fn forward_ray_hits_wall() {
        let world = WorldModel::new(vec![Surface::Plane {
            center: Vec3::new(5.0, 0.0, 0.0),
            normal: Vec3::new(-1.0, 0.0, 0.0),
            half_u: 10.0,
            half_v: 10.0,
        }])
        .unwrap();
        assert!(raycast_scan(&world, &PoseSE3::identity(), &ScanPattern::default(), 0.0).is_err());
        let single = ScanPattern {
            n_az: 1,
            n_el: 1,
            ..ScanPattern::default()
        };
        // A lone plane has a flat bounding box, so the sensor needs something behind it.
        let mut world = world;
        world.surfaces.push(Surface::Box {
            center: Vec3::new(-1.0, 0.0, 0.0),
            size: Vec3::new(0.1, 0.1, 0.1),
        });
        let cloud = raycast_scan(&world, &PoseSE3::identity(), &single, 0.0).unwrap();
        assert_eq!(cloud.len(), 1);
        assert!((cloud.points[0].norm() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_world_gives_empty_cloud() {
        let cloud = raycast_scan(&WorldModel::default(), &PoseSE3::identity(), &ScanPattern::default(), 0.0).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn room_ranges_bounded_by_diagonal() {
        let world = WorldModel::furnished_room(8.0, 6.0, 3.0);
        let diag = world.bounds().unwrap().diagonal();
        let pose = PoseSE3::from_euler(Vec3::new(0.5, -0.4, 1.2), EulerAngles::new(0.0, 0.1, 0.7));
        let cloud = raycast_scan(&world, &pose, &ScanPattern::default(), 0.0).unwrap();
        assert_eq!(cloud.len(), 1024);
        assert!(cloud.points.iter().all(|p| p.norm() <= diag));
    }

    #[test]
    fn jittered_scan_is_seeded_and_stays_in_bins() {
        let world = WorldModel::furnished_room(8.0, 6.0, 3.0);
        let pose = PoseSE3::from_translation(Vec3::new(0.0, 0.0, 1.2));
        let p = ScanPattern::default();
        let a = raycast_scan_jittered(&world, &pose, &p, 0.0, 4).unwrap();
        assert_eq!(a, raycast_scan_jittered(&world, &pose, &p, 0.0, 4).unwrap());
        assert_ne!(a, raycast_scan_jittered(&world, &pose, &p, 0.0, 5).unwrap());
        let centres = p.directions();
        let jittered = p.directions_jittered(&mut ChaCha8Rng::seed_from_u64(1));
        let half_bin = (p.h_fov / p.n_az as f64).max(p.v_fov / p.n_el as f64);
        assert!(centres.iter().zip(&jittered).all(|(c, j)| c.angle(j) <= half_bin));
    }

    #[test]
    fn world_text_round_trip_and_errors() {
        let w = WorldModel::furnished_room(8.0, 6.0, 3.0);
        assert_eq!(WorldModel::parse(&w.to_text(), Path::new("w")).unwrap(), w);
        assert!(WorldModel::parse("sphere 1 2 3\n", Path::new("w")).is_err());
        assert!(WorldModel::parse("# nothing\n", Path::new("w")).is_err());
    }

    #[test]
    fn inside_box_hits_far_wall() {
        let b = Surface::Box {
            center: Vec3::zeros(),
            size: Vec3::new(4.0, 4.0, 4.0),
        };
        assert!((b.intersect(&Vec3::zeros(), &Vec3::x()).unwrap() - 2.0).abs() < 1e-12);
        assert!((b.intersect(&Vec3::new(-5.0, 0.0, 0.0), &Vec3::x()).unwrap() - 3.0).abs() < 1e-12);
        assert!(b.intersect(&Vec3::new(-5.0, 3.0, 0.0), &Vec3::x()).is_none());
    }
}
