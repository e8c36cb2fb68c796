//! Shared geometric primitives and deterministic random helpers.

use nalgebra::Vector3;
use rand::Rng;

pub type Vec3 = Vector3<f64>;

/// Axis-aligned bounding box in world units.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        assert!(
            min.iter().zip(&max).all(|(a, b)| a < b),
            "degenerate AABB: min {min:?} max {max:?}"
        );
        Self { min, max }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn extent(&self) -> Vec3 {
        Vec3::new(
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        )
    }

    pub fn longest_edge(&self) -> f64 {
        let e = self.extent();
        e[0].max(e[1]).max(e[2])
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    /// Clamp a point into the box, component-wise.
    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        Vec3::new(
            p[0].clamp(self.min[0], self.max[0]),
            p[1].clamp(self.min[1], self.max[1]),
            p[2].clamp(self.min[2], self.max[2]),
        )
    }

    /// Map a point to normalized [0,1]^3 coordinates of the box.
    pub fn normalize(&self, p: &Vec3) -> Vec3 {
        let e = self.extent();
        Vec3::new(
            (p[0] - self.min[0]) / e[0],
            (p[1] - self.min[1]) / e[1],
            (p[2] - self.min[2]) / e[2],
        )
    }

    /// Intersect a ray (origin, unit direction) with the box; returns the
    /// entry/exit parameters when the intersection is non-empty.
    pub fn clip_ray(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if dir[a].abs() < 1e-300 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let mut ta = (self.min[a] - origin[a]) * inv;
            let mut tb = (self.max[a] - origin[a]) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }

    /// Grow the box by `pad` on every side.
    pub fn padded(&self, pad: f64) -> Self {
        Self {
            min: [self.min[0] - pad, self.min[1] - pad, self.min[2] - pad],
            max: [self.max[0] + pad, self.max[1] + pad, self.max[2] + pad],
        }
    }

    /// Smallest box containing both `self` and `p`.
    pub fn including(&self, p: &Vec3) -> Self {
        Self {
            min: [
                self.min[0].min(p[0]),
                self.min[1].min(p[1]),
                self.min[2].min(p[2]),
            ],
            max: [
                self.max[0].max(p[0]),
                self.max[1].max(p[1]),
                self.max[2].max(p[2]),
            ],
        }
    }
}

/// SplitMix64 finalizer; the backbone of all counter-based randomness.
///
/// Stratified ray jitter and per-patch stream seeds are derived from this so
/// results do not depend on thread scheduling or rng state ordering.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Combine a seed with up to three lane indices into one stream key.
pub fn stream_key(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    mix64(mix64(mix64(seed ^ tag.wrapping_mul(0xa24baed4963ee407)) ^ a) ^ b)
}

/// Uniform f64 in [0,1) from a hash key (counter-based, stateless).
pub fn hash_unit_f64(key: u64, counter: u64) -> f64 {
    let bits = mix64(key ^ counter.wrapping_mul(0xd6e8feb86659fd93));
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform direction on the unit sphere.
pub fn sample_unit_sphere<R: Rng>(rng: &mut R) -> Vec3 {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Standard normal via Box-Muller.
pub fn sample_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_ray_through_box() {
        let b = Aabb::new([0.0, 0.0, 0.0], [1.0, 2.0, 3.0]);
        let (t0, t1) = b
            .clip_ray(&Vec3::new(0.5, 1.0, -1.0), &Vec3::new(0.0, 0.0, 1.0))
            .unwrap();
        assert_eq!(t0, 1.0);
        assert_eq!(t1, 4.0);
    }

    #[test]
    fn clip_ray_miss() {
        let b = Aabb::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]);
        assert!(b
            .clip_ray(&Vec3::new(2.0, 2.0, -1.0), &Vec3::new(0.0, 0.0, 1.0))
            .is_none());
    }

    #[test]
    fn hash_unit_range_and_determinism() {
        for c in 0..1000 {
            let x = hash_unit_f64(12345, c);
            assert!((0.0..1.0).contains(&x));
            assert_eq!(x, hash_unit_f64(12345, c));
        }
    }

    #[test]
    fn sphere_samples_are_unit() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let v = sample_unit_sphere(&mut rng);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }
}
