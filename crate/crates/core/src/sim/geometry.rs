use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Obstacle {
    Disc { center: [f64; 2], radius: f64 },
    /// Thin wall between two points.
    Segment { a: [f64; 2], b: [f64; 2] },
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

fn closest_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 == 0.0 {
        return a;
    }
    let t = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    [a[0] + t * ab[0], a[1] + t * ab[1]]
}

fn segments_cross(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = cross(sub(q2, q1), sub(p1, q1));
    let d2 = cross(sub(q2, q1), sub(p2, q1));
    let d3 = cross(sub(p2, p1), sub(q1, p1));
    let d4 = cross(sub(p2, p1), sub(q2, p1));
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

impl Obstacle {
    /// Distance from `p` to the obstacle surface; negative inside a disc.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        match self {
            Obstacle::Disc { center, radius } => norm(sub(p, *center)) - radius,
            Obstacle::Segment { a, b } => norm(sub(p, closest_on_segment(p, *a, *b))),
        }
    }

    /// Surface distance and the unit direction pointing away from the
    /// nearest surface point.
    pub fn away(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        let (d, r) = match self {
            Obstacle::Disc { center, radius } => {
                let r = sub(p, *center);
                (norm(r) - radius, r)
            }
            Obstacle::Segment { a, b } => {
                let r = sub(p, closest_on_segment(p, *a, *b));
                (norm(r), r)
            }
        };
        let l = norm(r);
        if l < 1e-12 {
            (d, [0.0, 0.0])
        } else {
            (d, [r[0] / l, r[1] / l])
        }
    }

    /// Whether the straight segment `p`-`q` passes through the obstacle.
    pub fn blocks(&self, p: [f64; 2], q: [f64; 2]) -> bool {
        match self {
            Obstacle::Disc { center, radius } => {
                norm(sub(*center, closest_on_segment(*center, p, q))) < *radius
            }
            Obstacle::Segment { a, b } => segments_cross(p, q, *a, *b),
        }
    }

    /// Reference point for side tests.
    pub fn anchor(&self) -> [f64; 2] {
        match self {
            Obstacle::Disc { center, .. } => *center,
            Obstacle::Segment { a, b } => [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0],
        }
    }

    /// Move `x` (reached from `old`) back outside the obstacle by at least
    /// `margin` and drop the inward velocity component.
    pub fn enforce(&self, old: [f64; 2], x: &mut [f64; 2], v: &mut [f64; 2], margin: f64) {
        let normal = match self {
            Obstacle::Disc { center, radius } => {
                let r = sub(*x, *center);
                let l = norm(r);
                if l >= radius + margin {
                    return;
                }
                let n = if l > 1e-12 {
                    [r[0] / l, r[1] / l]
                } else {
                    let r0 = sub(old, *center);
                    let l0 = norm(r0).max(1e-12);
                    [r0[0] / l0, r0[1] / l0]
                };
                let k = radius + margin;
                *x = [center[0] + k * n[0], center[1] + k * n[1]];
                n
            }
            Obstacle::Segment { a, b } => {
                let crossed = segments_cross(old, *x, *a, *b);
                if !crossed && self.distance(*x) >= margin {
                    return;
                }
                let c_old = closest_on_segment(old, *a, *b);
                let r = sub(old, c_old);
                let l = norm(r);
                let n = if l > 1e-12 {
                    [r[0] / l, r[1] / l]
                } else {
                    let t = sub(*b, *a);
                    let lt = norm(t).max(1e-12);
                    [-t[1] / lt, t[0] / lt]
                };
                // keep the tangential part of the move on the original side
                let c = closest_on_segment(*x, *a, *b);
                let side = dot(sub(*x, c), n);
                if crossed || side < margin {
                    let push = margin - side;
                    *x = [x[0] + push * n[0], x[1] + push * n[1]];
                    if segments_cross(old, *x, *a, *b) || self.distance(*x) < margin {
                        *x = old;
                    }
                }
                n
            }
        };
        let vn = dot(*v, normal);
        if vn < 0.0 {
            v[0] -= vn * normal[0];
            v[1] -= vn * normal[1];
        }
    }
}
