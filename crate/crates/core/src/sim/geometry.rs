use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

pub const WALL_THICKNESS: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CupShape {
    Cup,
    Bottle,
    Mug,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BowlShape {
    Bowl,
    DogDish,
    FruitBowl,
}

impl CupShape {
    pub const ALL: [CupShape; 3] = [CupShape::Cup, CupShape::Bottle, CupShape::Mug];

    /// Outline in local coordinates: origin at the bottom center, y up.
    pub fn outline(self) -> Outline {
        match self {
            CupShape::Cup => Outline::open(vec![[-10.0, 26.0], [-8.0, 0.0], [8.0, 0.0], [10.0, 26.0]]),
            CupShape::Bottle => {
                // clear neck opening is a third of the cup's clear mouth
                let neck = ((20.0 - WALL_THICKNESS) / 3.0 + WALL_THICKNESS) / 2.0;
                Outline::open(vec![
                    [-neck, 30.0],
                    [-neck, 22.0],
                    [-9.0, 16.0],
                    [-9.0, 0.0],
                    [9.0, 0.0],
                    [9.0, 16.0],
                    [neck, 22.0],
                    [neck, 30.0],
                ])
            }
            CupShape::Mug => {
                let mut o = Outline::open(vec![[-11.0, 22.0], [-11.0, 0.0], [11.0, 0.0], [11.0, 22.0]]);
                o.extra.push(vec![[-11.0, 17.0], [-16.0, 17.0], [-16.0, 5.0], [-11.0, 5.0]]);
                o
            }
        }
    }
}

impl BowlShape {
    pub const ALL: [BowlShape; 3] = [BowlShape::Bowl, BowlShape::DogDish, BowlShape::FruitBowl];

    pub fn outline(self) -> Outline {
        match self {
            BowlShape::Bowl => Outline::open(vec![[-22.0, 16.0], [-14.0, 0.0], [14.0, 0.0], [22.0, 16.0]]),
            BowlShape::DogDish => Outline::open(vec![[-25.0, 9.0], [-20.0, 0.0], [20.0, 0.0], [25.0, 9.0]]),
            BowlShape::FruitBowl => {
                let pts = (0..=10)
                    .map(|k| {
                        let a = (200.0 + 14.0 * k as f64).to_radians();
                        [21.0 * a.cos(), 21.0 + 21.0 * a.sin()]
                    })
                    .collect();
                Outline::open(pts)
            }
        }
    }
}

/// An open-topped container: a wall polyline whose first and last points
/// are the lips, plus optional extra solid strokes (a mug handle).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outline {
    pub wall: Vec<Point>,
    pub extra: Vec<Vec<Point>>,
}

impl Outline {
    fn open(wall: Vec<Point>) -> Self {
        Self { wall, extra: Vec::new() }
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Outline {
        Outline { wall: self.wall.iter().map(|&p| f(p)).collect(), extra: self.extra.iter().map(|s| s.iter().map(|&p| f(p)).collect()).collect() }
    }

    pub fn translate(&self, d: Point) -> Outline {
        self.map(|p| [p[0] + d[0], p[1] + d[1]])
    }

    /// Rotate clockwise by `angle` radians about `pivot`.
    pub fn rotate_cw(&self, pivot: Point, angle: f64) -> Outline {
        let (s, c) = angle.sin_cos();
        self.map(|p| {
            let (x, y) = (p[0] - pivot[0], p[1] - pivot[1]);
            [pivot[0] + x * c + y * s, pivot[1] - x * s + y * c]
        })
    }

    pub fn mirror_x(&self, axis: f64) -> Outline {
        self.map(|p| [2.0 * axis - p[0], p[1]])
    }

    /// Pour-side lip: the last wall point, on the +x side when upright.
    pub fn right_lip(&self) -> Point {
        self.wall[self.wall.len() - 1]
    }

    /// Distance from `p` to the nearest solid stroke.
    pub fn wall_distance(&self, p: Point) -> f64 {
        std::iter::once(&self.wall).chain(&self.extra).map(|s| polyline_distance(s, p)).fold(f64::INFINITY, f64::min)
    }

    pub fn is_solid(&self, p: Point) -> bool {
        self.wall_distance(p) <= WALL_THICKNESS / 2.0
    }

    /// Inside the region enclosed by the wall and the segment joining its lips.
    pub fn contains(&self, p: Point) -> bool {
        point_in_polygon(&self.wall, p)
    }

    /// Inside the interior or on the walls.
    pub fn covers(&self, p: Point) -> bool {
        self.contains(p) || self.is_solid(p)
    }
}

pub fn segment_distance(a: Point, b: Point, p: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    (qx * qx + qy * qy).sqrt()
}

pub fn polyline_distance(line: &[Point], p: Point) -> f64 {
    line.windows(2).map(|w| segment_distance(w[0], w[1], p)).fold(f64::INFINITY, f64::min)
}

/// Even-odd test against the polygon closed by joining the last point to the first.
pub fn point_in_polygon(poly: &[Point], p: Point) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polygon_membership() {
        let sq = [[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]];
        assert!(point_in_polygon(&sq, [1.0, 1.0]));
        assert!(!point_in_polygon(&sq, [3.0, 1.0]));
    }

    #[test]
    fn clockwise_rotation_tips_toward_positive_x() {
        let o = CupShape::Cup.outline();
        let lip = o.right_lip();
        let r = o.rotate_cw(lip, std::f64::consts::FRAC_PI_2);
        let bottom_center = [(r.wall[1][0] + r.wall[2][0]) / 2.0, (r.wall[1][1] + r.wall[2][1]) / 2.0];
        assert!(bottom_center[0] < lip[0] && (bottom_center[1] - lip[1]).abs() < 12.0);
        assert_eq!(r.right_lip(), lip);
    }

    #[test]
    fn bottle_neck_is_a_third_of_cup_mouth() {
        let cup = CupShape::Cup.outline();
        let bottle = CupShape::Bottle.outline();
        let clear = |o: &Outline| (o.wall[o.wall.len() - 1][0] - o.wall[0][0]).abs() - WALL_THICKNESS;
        assert!((clear(&bottle) - clear(&cup) / 3.0).abs() < 1e-12);
    }
}
