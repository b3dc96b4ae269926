//! Hand-rolled SVG emitters: a triangle-mesh heatmap with a color
//! legend, and a log-log convergence plot.

use spaceform_lab::mesh::Mesh;
use std::fmt::Write;

/// Five-stop approximation of a perceptually ordered colormap.
const STOPS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let c: Vec<u8> = (0..3)
        .map(|k| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Heatmap of a nodal field: each triangle filled with the color of its
/// vertex average, boundary edges overdrawn, legend on the right.
pub fn heatmap(mesh: &Mesh, values: &[f64], title: &str) -> String {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in &mesh.vertices {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let (w, h, m) = (560.0, 560.0, 30.0);
    let sx = |x: f64| m + (x - x0) / span * w;
    // SVG y grows downward
    let sy = |y: f64| m + h - (y - y0) / span * h;

    let vmin = values.iter().cloned().fold(f64::MAX, f64::min);
    let vmax = values.iter().cloned().fold(f64::MIN, f64::max);
    let range = (vmax - vmin).max(1e-300);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">",
        w + 2.0 * m + 90.0,
        h + 2.0 * m,
        w + 2.0 * m + 90.0,
        h + 2.0 * m
    );
    let _ = writeln!(out, "<title>{title}</title>");
    for t in &mesh.triangles {
        let mean = (values[t[0]] + values[t[1]] + values[t[2]]) / 3.0;
        let fill = color((mean - vmin) / range);
        let pts: Vec<String> = t
            .iter()
            .map(|&v| format!("{:.2},{:.2}", sx(mesh.vertices[v][0]), sy(mesh.vertices[v][1])))
            .collect();
        let _ = writeln!(
            out,
            "<polygon points=\"{}\" fill=\"{fill}\" stroke=\"{fill}\" stroke-width=\"0.4\"/>",
            pts.join(" ")
        );
    }
    for (edges, stroke) in [(&mesh.sigma_edges, "#000000"), (&mesh.robin_edges, "#888888")] {
        for e in edges.iter() {
            let (a, b) = (mesh.vertices[e[0]], mesh.vertices[e[1]]);
            let _ = writeln!(
                out,
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{stroke}\" stroke-width=\"1.2\"/>",
                sx(a[0]),
                sy(a[1]),
                sx(b[0]),
                sy(b[1])
            );
        }
    }
    // legend: vertical gradient bar with min/max labels
    let (lx, ly, lw, lh) = (w + 2.0 * m + 10.0, m, 18.0, h);
    for i in 0..64 {
        let t = 1.0 - i as f64 / 63.0;
        let _ = writeln!(
            out,
            "<rect x=\"{lx}\" y=\"{:.2}\" width=\"{lw}\" height=\"{:.2}\" fill=\"{}\"/>",
            ly + i as f64 * lh / 64.0,
            lh / 64.0 + 0.5,
            color(t)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\">{:.3e}</text>",
        lx + lw + 4.0,
        ly + 10.0,
        vmax
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\">{:.3e}</text>",
        lx + lw + 4.0,
        ly + lh,
        vmin
    );
    out.push_str("</svg>\n");
    out
}

/// Log-log error-vs-h plot with a slope-2 reference line.
pub fn convergence(rows: &[(f64, f64, f64)], title: &str) -> String {
    let (w, h, m) = (520.0, 360.0, 50.0);
    let xs: Vec<f64> = rows.iter().map(|r| r.0.log10()).collect();
    let mut ys: Vec<f64> = Vec::new();
    for r in rows {
        ys.push(r.1.log10());
        ys.push(r.2.log10());
    }
    let (x0, x1) = (
        xs.iter().cloned().fold(f64::MAX, f64::min) - 0.05,
        xs.iter().cloned().fold(f64::MIN, f64::max) + 0.05,
    );
    let (y0, y1) = (
        ys.iter().cloned().fold(f64::MAX, f64::min) - 0.2,
        ys.iter().cloned().fold(f64::MIN, f64::max) + 0.2,
    );
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * w;
    let sy = |y: f64| m + h - (y - y0) / (y1 - y0) * h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">",
        w + 2.0 * m,
        h + 2.0 * m,
        w + 2.0 * m,
        h + 2.0 * m
    );
    let _ = writeln!(out, "<title>{title}</title>");
    let _ = writeln!(
        out,
        "<rect x=\"{m}\" y=\"{m}\" width=\"{w}\" height=\"{h}\" fill=\"none\" stroke=\"#333\"/>"
    );
    let series = [(1usize, "#1f77b4", "L2 error"), (2usize, "#d62728", "H1 error")];
    for (idx, stroke, label) in series {
        let pts: Vec<String> = rows
            .iter()
            .map(|r| {
                let y = if idx == 1 { r.1 } else { r.2 };
                format!("{:.2},{:.2}", sx(r.0.log10()), sy(y.log10()))
            })
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"2\"/>",
            pts.join(" ")
        );
        for p in &pts {
            let mut it = p.split(',');
            let (px, py): (f64, f64) =
                (it.next().unwrap().parse().unwrap(), it.next().unwrap().parse().unwrap());
            let _ = writeln!(out, "<circle cx=\"{px}\" cy=\"{py}\" r=\"3\" fill=\"{stroke}\"/>");
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" fill=\"{stroke}\">{label}</text>",
            m + 10.0,
            m + 16.0 * (idx as f64)
        );
    }
    // slope-2 reference anchored at the coarsest L2 point
    let (hx, e0) = (rows[0].0, rows[0].1);
    let href = rows.last().unwrap().0;
    let eref = e0 * (href / hx).powi(2);
    let _ = writeln!(
        out,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999\" stroke-dasharray=\"5,4\"/>",
        sx(hx.log10()),
        sy(e0.log10()),
        sx(href.log10()),
        sy(eref.log10())
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\">log10 h</text>",
        m + w / 2.0 - 20.0,
        m + h + 30.0
    );
    out.push_str("</svg>\n");
    out
}
