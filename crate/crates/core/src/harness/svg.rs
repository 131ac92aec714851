//! Minimal SVG output for mazes, graphs, trajectories and scatter plots.

use std::fmt::Write;

use crate::env::{Cell, GridMaze};

const CELL: f64 = 20.0;

/// An SVG document under construction.
pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Svg {
            width,
            height,
            body: String::new(),
        }
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#);
    }

    pub fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="{fill}"/>"#);
    }

    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{stroke}" stroke-width="{width}"/>"#,
            a.0, a.1, b.0, b.1
        );
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: &str, width: f64) {
        if points.is_empty() {
            return;
        }
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#,
            pts.join(" ")
        );
    }

    pub fn text(&mut self, x: f64, y: f64, s: &str) {
        let _ = writeln!(self.body, r#"<text x="{x:.2}" y="{y:.2}" font-size="12">{s}</text>"#);
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Pixel centre of a cell; rows are flipped so `y` grows upward.
pub fn cell_centre(maze: &GridMaze, x: f64, y: f64) -> (f64, f64) {
    ((x + 0.5) * CELL, (maze.height() as f64 - 0.5 - y) * CELL)
}

/// Canvas with the maze walls drawn.
pub fn maze_canvas(maze: &GridMaze) -> Svg {
    let mut svg = Svg::new(maze.width() as f64 * CELL, maze.height() as f64 * CELL);
    svg.rect(0.0, 0.0, maze.width() as f64 * CELL, maze.height() as f64 * CELL, "white");
    for c in maze.blocked_cells() {
        let (x, y) = cell_centre(maze, c.x as f64, c.y as f64);
        svg.rect(x - CELL / 2.0, y - CELL / 2.0, CELL, CELL, "#333");
    }
    svg
}

/// Maze with graph edges (as straight lines between endpoint cells),
/// vertices, and optional trajectories.
pub fn graph_svg(maze: &GridMaze, vertices: &[Cell], edges: &[(usize, usize, bool)], paths: &[Vec<Cell>]) -> String {
    let mut svg = maze_canvas(maze);
    let at = |c: &Cell| cell_centre(maze, c.x as f64, c.y as f64);
    for &(a, b, bad) in edges {
        let colour = if bad { "#d62728" } else { "#9ecae1" };
        svg.line(at(&vertices[a]), at(&vertices[b]), colour, 1.0);
    }
    for v in vertices {
        let (x, y) = at(v);
        svg.circle(x, y, 3.0, "#1f77b4");
    }
    for p in paths {
        let pts: Vec<(f64, f64)> = p.iter().map(at).collect();
        svg.polyline(&pts, "#2ca02c", 3.0);
        if let (Some(s), Some(g)) = (p.first(), p.last()) {
            let (sx, sy) = at(s);
            let (gx, gy) = at(g);
            svg.circle(sx, sy, 5.0, "#ff7f0e");
            svg.circle(gx, gy, 5.0, "#d62728");
        }
    }
    svg.finish()
}

/// Scatter plot of `(x, y)` points with axis labels.
pub fn scatter_svg(points: &[(f64, f64)], x_label: &str, y_label: &str) -> String {
    let (w, h, m) = (480.0, 360.0, 40.0);
    let finite: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
    let max_x = finite.iter().map(|p| p.0).fold(1e-9, f64::max);
    let max_y = finite.iter().map(|p| p.1).fold(1e-9, f64::max);
    let mut svg = Svg::new(w, h);
    svg.rect(0.0, 0.0, w, h, "white");
    svg.line((m, h - m), (w - m, h - m), "black", 1.0);
    svg.line((m, h - m), (m, m), "black", 1.0);
    svg.text(w / 2.0, h - 8.0, x_label);
    svg.text(4.0, m - 10.0, y_label);
    for (x, y) in finite {
        let px = m + x / max_x * (w - 2.0 * m);
        let py = h - m - y / max_y * (h - 2.0 * m);
        svg.circle(px, py, 2.0, "#1f77b4");
    }
    svg.finish()
}
