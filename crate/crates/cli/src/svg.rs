//! Empirical size against nominal level, with the diagonal for reference.

use std::fmt::Write;

use treetest::simulation::SizeCurve;

const W: f64 = 480.0;
const H: f64 = 480.0;
const PAD: f64 = 60.0;

fn x(v: f64) -> f64 {
    PAD + v * (W - 2.0 * PAD)
}

fn y(v: f64) -> f64 {
    H - PAD - v * (H - 2.0 * PAD)
}

pub fn size_plot(curve: &SizeCurve, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x(0.0),
        y(1.0),
        x(1.0) - x(0.0),
        y(0.0) - y(1.0)
    );
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let _ = writeln!(s, r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="black"/>"#, x(t), y(0.0), y(0.0) + 5.0);
        let _ = writeln!(s, r#"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="black"/>"#, x(0.0) - 5.0, y(t), x(0.0));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{t:.1}</text>"#, x(t), y(0.0) + 20.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="end">{t:.1}</text>"#, x(0.0) - 8.0, y(t) + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 4"/>"#,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    for i in 0..curve.alphas.len() {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="steelblue"/>"#,
            x(curve.alphas[i]),
            y(curve.empirical_size(i))
        );
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">nominal level</text>"#, W / 2.0, H - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.1})">empirical size</text>"#,
        H / 2.0,
        H / 2.0
    );
    let _ = writeln!(s, r#"<text x="{:.1}" y="30" font-size="14" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
