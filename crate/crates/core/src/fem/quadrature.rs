//! Quadrature on the reference triangle `(0,0), (1,0), (0,1)` and on [0, 1].

/// Symmetric rule on the reference triangle; weights sum to ½.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Reference coordinates (ξ, η).
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

// Tabulated nodes keep all published digits.
#[allow(clippy::excessive_precision)]
impl QuadratureRule {
    fn from_orbits(degree: usize, centre: Option<f64>, s21: &[(f64, f64)], s111: &[(f64, f64, f64)]) -> Self {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        if let Some(w) = centre {
            points.push([1.0 / 3.0, 1.0 / 3.0]);
            weights.push(0.5 * w);
        }
        for &(a, w) in s21 {
            let b = 1.0 - 2.0 * a;
            for p in [[a, a], [b, a], [a, b]] {
                points.push(p);
                weights.push(0.5 * w);
            }
        }
        for &(a, b, w) in s111 {
            let c = 1.0 - a - b;
            for p in [[a, b], [b, a], [b, c], [c, b], [a, c], [c, a]] {
                points.push(p);
                weights.push(0.5 * w);
            }
        }
        Self { points, weights, degree }
    }

    pub fn centroid() -> Self {
        Self::from_orbits(1, Some(1.0), &[], &[])
    }

    /// Dunavant, 3 points.
    pub fn degree2() -> Self {
        Self::from_orbits(2, None, &[(1.0 / 6.0, 1.0 / 3.0)], &[])
    }

    /// Dunavant, 6 points.
    pub fn degree4() -> Self {
        Self::from_orbits(
            4,
            None,
            &[
                (0.445_948_490_915_964_886_318_329_253_883_05, 0.223_381_589_678_011_465_695_007_008_433_12),
                (0.091_576_213_509_770_743_459_571_463_402_202, 0.109_951_743_655_321_867_638_326_324_900_21),
            ],
            &[],
        )
    }

    /// Dunavant, 12 points.
    pub fn degree6() -> Self {
        Self::from_orbits(
            6,
            None,
            &[
                (0.249_286_745_170_910_421_136, 0.116_786_275_726_379_366_030),
                (0.063_089_014_491_502_228_340, 0.050_844_906_370_206_816_921),
            ],
            &[(0.053_145_049_844_816_947_353, 0.310_352_451_033_784_405_416, 0.082_851_075_618_373_575_194)],
        )
    }

    /// Smallest available rule exact for polynomials of degree `d`.
    pub fn for_degree(d: usize) -> Self {
        match d {
            0 | 1 => Self::centroid(),
            2 => Self::degree2(),
            3 | 4 => Self::degree4(),
            5 | 6 => Self::degree6(),
            _ => panic!("no quadrature rule of degree {d}"),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Barycentric coordinates of point `q`.
    pub fn barycentric(&self, q: usize) -> [f64; 3] {
        let [x, y] = self.points[q];
        [1.0 - x - y, x, y]
    }
}

/// Gauss–Legendre rule on [0, 1]; weights sum to 1.
#[derive(Debug, Clone)]
pub struct LineRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LineRule {
    pub fn gauss(n: usize) -> Self {
        let (p, w): (Vec<f64>, Vec<f64>) = match n {
            1 => (vec![0.0], vec![2.0]),
            2 => {
                let s = 1.0 / 3f64.sqrt();
                (vec![-s, s], vec![1.0, 1.0])
            }
            3 => {
                let s = (0.6f64).sqrt();
                (vec![-s, 0.0, s], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
            }
            _ => panic!("Gauss rule with {n} points is not tabulated"),
        };
        Self {
            points: p.iter().map(|x| 0.5 * (x + 1.0)).collect(),
            weights: w.iter().map(|x| 0.5 * x).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
