//! World geometry and the plain-text world file format.
//!
//! ```text
//! # comment
//! track <width> x1 y1 x2 y2 ...
//! obstacle x1 y1 x2 y2
//! start x y theta
//! noise <amplitude>
//! ```

use std::fmt;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub const fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    /// Maps a point given in the robot frame (x forward, y left) to the world.
    pub fn to_world(&self, local: Point) -> Point {
        let (s, c) = self.theta.sin_cos();
        Point::new(self.x + local.x * c - local.y * s, self.y + local.x * s + local.y * c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    pub const fn new(a: Point, b: Point) -> Self {
        Self { a, b }
    }

    pub fn closest_point(&self, p: Point) -> Point {
        let (dx, dy) = (self.b.x - self.a.x, self.b.y - self.a.y);
        let len2 = dx * dx + dy * dy;
        if len2 == 0.0 {
            return self.a;
        }
        let t = (((p.x - self.a.x) * dx + (p.y - self.a.y) * dy) / len2).clamp(0.0, 1.0);
        Point::new(self.a.x + t * dx, self.a.y + t * dy)
    }

    pub fn distance_to(&self, p: Point) -> f64 {
        self.closest_point(p).distance(p)
    }

    /// True when the two segments share a point.
    pub fn intersects(&self, other: &Segment) -> bool {
        fn orient(a: Point, b: Point, c: Point) -> f64 {
            (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
        }
        fn on_segment(a: Point, b: Point, p: Point) -> bool {
            p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
        }
        let (p, q, r, s) = (self.a, self.b, other.a, other.b);
        let d1 = orient(r, s, p);
        let d2 = orient(r, s, q);
        let d3 = orient(p, q, r);
        let d4 = orient(p, q, s);
        if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
            return true;
        }
        (d1 == 0.0 && on_segment(r, s, p))
            || (d2 == 0.0 && on_segment(r, s, q))
            || (d3 == 0.0 && on_segment(p, q, r))
            || (d4 == 0.0 && on_segment(p, q, s))
    }
}

/// A dark line drawn on the floor: a polyline with a constant width.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    points: Vec<Point>,
    width: f64,
}

impl Track {
    pub fn new(points: Vec<Point>, width: f64) -> Result<Self, WorldError> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(WorldError::invalid("track width must be positive"));
        }
        if points.len() < 2 {
            return Err(WorldError::invalid("track needs at least two points"));
        }
        Ok(Self { points, width })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.points.windows(2).map(|w| Segment::new(w[0], w[1]))
    }

    /// Distance from `p` to the polyline's centre line.
    pub fn distance_to(&self, p: Point) -> f64 {
        self.segments().map(|s| s.distance_to(p)).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    pub track: Option<Track>,
    pub obstacles: Vec<Segment>,
    pub start: Pose,
    /// IR noise amplitude on the 0–100 reading scale.
    pub ir_noise: f64,
}

impl Default for WorldModel {
    fn default() -> Self {
        Self {
            track: None,
            obstacles: Vec::new(),
            start: Pose::default(),
            ir_noise: 0.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read world file: {0}")]
    Io(#[from] std::io::Error),
}

impl WorldError {
    fn invalid(message: &str) -> Self {
        WorldError::Invalid(message.to_owned())
    }
}

impl WorldModel {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorldError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, WorldError> {
        let mut world = WorldModel::default();
        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let syntax = |message: String| WorldError::Syntax { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut words = content.split_whitespace();
            let keyword = words.next().unwrap_or_default();
            let numbers = words
                .map(|w| w.parse::<f64>().map_err(|_| syntax(format!("not a number: `{w}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(bad) = numbers.iter().find(|v| !v.is_finite()) {
                return Err(syntax(format!("not a finite number: {bad}")));
            }
            match keyword {
                "track" => {
                    if world.track.is_some() {
                        return Err(syntax("only one track per world".into()));
                    }
                    let Some((&width, coords)) = numbers.split_first() else {
                        return Err(syntax("track needs a width".into()));
                    };
                    if coords.len() % 2 != 0 {
                        return Err(syntax("track coordinates must come in x y pairs".into()));
                    }
                    let points = coords.chunks(2).map(|c| Point::new(c[0], c[1])).collect();
                    world.track = Some(Track::new(points, width).map_err(|e| syntax(e.to_string()))?);
                }
                "obstacle" => {
                    let [x1, y1, x2, y2] = numbers[..] else {
                        return Err(syntax("obstacle needs x1 y1 x2 y2".into()));
                    };
                    world
                        .obstacles
                        .push(Segment::new(Point::new(x1, y1), Point::new(x2, y2)));
                }
                "start" => {
                    let [x, y, theta] = numbers[..] else {
                        return Err(syntax("start needs x y theta".into()));
                    };
                    world.start = Pose::new(x, y, theta);
                }
                "noise" => {
                    let [amplitude] = numbers[..] else {
                        return Err(syntax("noise needs one amplitude".into()));
                    };
                    if !(0.0..=100.0).contains(&amplitude) {
                        return Err(syntax("noise amplitude must be within 0..=100".into()));
                    }
                    world.ir_noise = amplitude;
                }
                other => return Err(syntax(format!("unknown item `{other}`"))),
            }
        }
        Ok(world)
    }

    /// Distance from `p` to the nearest obstacle segment.
    pub fn obstacle_distance(&self, p: Point) -> f64 {
        self.obstacles
            .iter()
            .map(|s| s.distance_to(p))
            .fold(f64::INFINITY, f64::min)
    }
}

impl fmt::Display for WorldModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(track) = &self.track {
            write!(f, "track {}", track.width)?;
            for p in &track.points {
                write!(f, " {} {}", p.x, p.y)?;
            }
            writeln!(f)?;
        }
        for o in &self.obstacles {
            writeln!(f, "obstacle {} {} {} {}", o.a.x, o.a.y, o.b.x, o.b.y)?;
        }
        writeln!(f, "start {} {} {}", self.start.x, self.start.y, self.start.theta)?;
        if self.ir_noise > 0.0 {
            writeln!(f, "noise {}", self.ir_noise)?;
        }
        Ok(())
    }
}

/// The worlds shipped in the repository's `worlds/` directory.
pub mod bundled {
    pub const BOX: &str = include_str!("../../../../worlds/box.txt");
    pub const STRAIGHT: &str = include_str!("../../../../worlds/straight.txt");
    pub const U_CURVE: &str = include_str!("../../../../worlds/u-curve.txt");
    pub const OVAL: &str = include_str!("../../../../worlds/oval.txt");

    /// Source text of a bundled world by name (`box`, `straight`, `u-curve`,
    /// `oval`).
    pub fn get(name: &str) -> Option<&'static str> {
        match name {
            "box" => Some(BOX),
            "straight" => Some(STRAIGHT),
            "u-curve" => Some(U_CURVE),
            "oval" => Some(OVAL),
            _ => None,
        }
    }
}
