//! Colour-map export of category grids.

use std::fmt::Write as _;

use qdtile::CategoryGrid;

/// Binary PPM with `scale`×`scale` pixels per cell.
pub fn to_ppm(grid: &CategoryGrid, scale: usize) -> Vec<u8> {
    let scale = scale.max(1);
    let (w, h) = (grid.width * scale, grid.height * scale);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            out.extend_from_slice(&grid.get(y / scale, x / scale).color_hint());
        }
    }
    out
}

pub fn to_svg(grid: &CategoryGrid, cell: usize) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" shape-rendering="crispEdges">"#,
        grid.width * cell,
        grid.height * cell
    )
    .unwrap();
    for r in 0..grid.height {
        for c in 0..grid.width {
            let cat = grid.get(r, c);
            let [red, g, b] = cat.color_hint();
            writeln!(
                s,
                r##"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="#{red:02x}{g:02x}{b:02x}"><title>{}</title></rect>"##,
                c * cell,
                r * cell,
                cat.name()
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}
