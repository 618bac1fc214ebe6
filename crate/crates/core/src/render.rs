//! Rasterisation of symbolic states to RGB frames, and an exact inverse used
//! as a test oracle.
//!
//! Each grid cell is a 10x10 pixel tile holding at most one sprite. The
//! background is pure black and no sprite color is black, so a tile's lit
//! pixels spell out its shape mask and all share one color.

use serde::{Deserialize, Serialize};

use crate::chemistry::ChemState;
use crate::error::{Error, Result};
use crate::physics::{Cell, ObjColor, PhysicsSetting, PhysicsState, INTENSITY_LEVELS};

pub const CELL_PX: usize = 10;
pub const NUM_SHAPES: usize = 5;

/// Discrete colormap. Lower index is heavier in the physics palette settings.
pub const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
];

/// 10x10 masks, one row per entry, bit 9 is the leftmost column.
/// Order: square, circle, triangle, diamond, plus.
pub const SHAPES: [[u16; CELL_PX]; NUM_SHAPES] = [
    [
        0, 0x1FE, 0x1FE, 0x1FE, 0x1FE, 0x1FE, 0x1FE, 0x1FE, 0x1FE, 0,
    ],
    [
        0, 0x078, 0x0FC, 0x1FE, 0x1FE, 0x1FE, 0x1FE, 0x0FC, 0x078, 0,
    ],
    [
        0, 0x030, 0x030, 0x078, 0x078, 0x0FC, 0x0FC, 0x1FE, 0x1FE, 0,
    ],
    [
        0, 0x030, 0x078, 0x0FC, 0x1FE, 0x1FE, 0x0FC, 0x078, 0x030, 0,
    ],
    [
        0, 0x078, 0x078, 0x078, 0x1FE, 0x1FE, 0x078, 0x078, 0x078, 0,
    ],
];

fn mask_bit(shape: usize, row: usize, col: usize) -> bool {
    SHAPES[shape][row] & (1 << (CELL_PX - 1 - col)) != 0
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Frame {
    pub fn blank(grid: usize) -> Self {
        let side = grid * CELL_PX;
        Frame {
            width: side,
            height: side,
            data: vec![0; side * side * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Pixels scaled to [0, 1].
    pub fn normalized(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().map(|&b| b as f64 / 255.0)
    }

    /// 8-bit RGB PNG, no alpha.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc
                .write_header()
                .map_err(|e| Error::Config(format!("png header: {e}")))?;
            writer
                .write_image_data(&self.data)
                .map_err(|e| Error::Config(format!("png data: {e}")))?;
        }
        Ok(out)
    }
}

/// Which color family a frame's sprites use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColorScheme {
    Intensity,
    Palette,
}

impl ColorScheme {
    pub fn for_physics(setting: PhysicsSetting) -> Self {
        match setting {
            PhysicsSetting::Observed => ColorScheme::Intensity,
            _ => ColorScheme::Palette,
        }
    }
}

/// One drawable object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Sprite {
    pub cell: Cell,
    pub shape: u8,
    pub color: ObjColor,
}

/// RGB of an object color. Intensity shades run from light blue (level 0)
/// to dark navy (the top level); none is black.
pub fn rgb(color: ObjColor) -> [u8; 3] {
    match color {
        ObjColor::Intensity(level) => {
            let b = 255 - level.min(INTENSITY_LEVELS);
            [b / 4, b / 2, b]
        }
        ObjColor::Palette(i) => PALETTE[i as usize % PALETTE.len()],
    }
}

fn color_from_rgb(px: [u8; 3], scheme: ColorScheme) -> Option<ObjColor> {
    match scheme {
        ColorScheme::Intensity => {
            let b = px[2];
            let level = 255u8.checked_sub(b)?;
            (level <= INTENSITY_LEVELS && px == [b / 4, b / 2, b]).then_some(ObjColor::Intensity(level))
        }
        ColorScheme::Palette => PALETTE
            .iter()
            .position(|&c| c == px)
            .map(|i| ObjColor::Palette(i as u8)),
    }
}

pub fn render_sprites(sprites: &[Sprite], grid: usize) -> Frame {
    let mut frame = Frame::blank(grid);
    for s in sprites {
        let color = rgb(s.color);
        let shape = s.shape as usize % NUM_SHAPES;
        for r in 0..CELL_PX {
            for c in 0..CELL_PX {
                if mask_bit(shape, r, c) {
                    frame.set(s.cell.col * CELL_PX + c, s.cell.row * CELL_PX + r, color);
                }
            }
        }
    }
    frame
}

pub fn render_physics(state: &PhysicsState, grid: usize) -> Frame {
    let sprites: Vec<Sprite> = (0..state.len())
        .map(|i| Sprite {
            cell: state.positions[i],
            shape: state.shapes[i],
            color: state.colors[i],
        })
        .collect();
    render_sprites(&sprites, grid)
}

pub fn render_chem(state: &ChemState, grid: usize) -> Frame {
    let sprites: Vec<Sprite> = (0..state.colors.len())
        .map(|i| Sprite {
            cell: state.positions[i],
            shape: state.shapes[i],
            color: ObjColor::Palette(state.colors[i]),
        })
        .collect();
    render_sprites(&sprites, grid)
}

/// Recover every sprite from a rendered frame, in row-major cell order.
pub fn decode_oracle(frame: &Frame, scheme: ColorScheme) -> Result<Vec<Sprite>> {
    if frame.width != frame.height || !frame.width.is_multiple_of(CELL_PX) || frame.data.len() != frame.width * frame.height * 3 {
        return Err(Error::Mismatch(format!("{}x{} frame is not a grid of tiles", frame.width, frame.height)));
    }
    let grid = frame.width / CELL_PX;
    let mut out = Vec::new();
    for row in 0..grid {
        for col in 0..grid {
            let fail = |reason: String| Error::Decode { row, col, reason };
            let mut color = None;
            let mut lit = [0u16; CELL_PX];
            for r in 0..CELL_PX {
                for c in 0..CELL_PX {
                    let px = frame.pixel(col * CELL_PX + c, row * CELL_PX + r);
                    if px == [0, 0, 0] {
                        continue;
                    }
                    match color {
                        None => color = Some(px),
                        Some(seen) if seen != px => return Err(fail("mixed colors in one tile".into())),
                        _ => {}
                    }
                    lit[r] |= 1 << (CELL_PX - 1 - c);
                }
            }
            let Some(px) = color else { continue };
            let shape = SHAPES
                .iter()
                .position(|m| *m == lit)
                .ok_or_else(|| fail("lit pixels match no shape mask".into()))?;
            let color = color_from_rgb(px, scheme)
                .ok_or_else(|| fail(format!("color {px:?} is not in the scheme")))?;
            out.push(Sprite {
                cell: Cell::new(row, col),
                shape: shape as u8,
                color,
            });
        }
    }
    Ok(out)
}

/// Decode a physics frame back to a rank-ordered state. Weights are rebuilt
/// from colors the same way a reset assigns them.
pub fn decode_physics(frame: &Frame, setting: PhysicsSetting) -> Result<PhysicsState> {
    let mut sprites = decode_oracle(frame, ColorScheme::for_physics(setting))?;
    // heaviest first: darkest intensity, or lowest palette slot
    match setting {
        PhysicsSetting::Observed => sprites.sort_by(|a, b| b.color.cmp(&a.color)),
        _ => sprites.sort_by_key(|a| a.color),
    }
    let m = sprites.len();
    let weights = sprites
        .iter()
        .enumerate()
        .map(|(rank, s)| s.color.intensity().unwrap_or((m - rank) as f64))
        .collect();
    Ok(PhysicsState {
        positions: sprites.iter().map(|s| s.cell).collect(),
        weights,
        colors: sprites.iter().map(|s| s.color).collect(),
        shapes: sprites.iter().map(|s| s.shape).collect(),
    })
}

/// Decode a chemistry frame, given where each node sits.
pub fn decode_chem(frame: &Frame, positions: &[Cell]) -> Result<ChemState> {
    let sprites = decode_oracle(frame, ColorScheme::Palette)?;
    if sprites.len() != positions.len() {
        return Err(Error::Mismatch(format!(
            "found {} sprites for {} objects",
            sprites.len(),
            positions.len()
        )));
    }
    let mut colors = Vec::with_capacity(positions.len());
    let mut shapes = Vec::with_capacity(positions.len());
    for &p in positions {
        let s = sprites
            .iter()
            .find(|s| s.cell == p)
            .ok_or_else(|| Error::Decode { row: p.row, col: p.col, reason: "expected object missing".into() })?;
        colors.push(s.color.code());
        shapes.push(s.shape);
    }
    Ok(ChemState {
        colors,
        positions: positions.to_vec(),
        shapes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_are_distinct_and_inside_tile() {
        for a in 0..NUM_SHAPES {
            for b in a + 1..NUM_SHAPES {
                assert_ne!(SHAPES[a], SHAPES[b]);
            }
            assert!(SHAPES[a].iter().all(|&row| row < (1 << CELL_PX)));
            assert!(SHAPES[a].iter().any(|&row| row != 0));
        }
    }

    #[test]
    fn palette_colors_separated_and_not_black() {
        for (i, a) in PALETTE.iter().enumerate() {
            assert_ne!(*a, [0, 0, 0]);
            for b in &PALETTE[i + 1..] {
                let gap = (0..3).map(|c| a[c].abs_diff(b[c])).max().unwrap();
                assert!(gap >= 32, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn empty_state_is_black() {
        let f = render_sprites(&[], 5);
        assert_eq!(f.data.len(), 50 * 50 * 3);
        assert!(f.data.iter().all(|&b| b == 0));
        assert!(decode_oracle(&f, ColorScheme::Palette).unwrap().is_empty());
    }

    #[test]
    fn single_square_in_corner() {
        let s = Sprite { cell: Cell::new(0, 0), shape: 0, color: ObjColor::Palette(13) };
        let f = render_sprites(&[s], 5);
        for y in 0..50 {
            for x in 0..50 {
                let lit = f.pixel(x, y) != [0, 0, 0];
                let expect = x < 10 && y < 10 && mask_bit(0, y, x);
                assert_eq!(lit, expect, "({x},{y})");
            }
        }
    }

    #[test]
    fn corrupted_pixel_fails_decode() {
        let s = Sprite { cell: Cell::new(2, 3), shape: 1, color: ObjColor::Palette(4) };
        let mut f = render_sprites(&[s], 5);
        assert_eq!(decode_oracle(&f, ColorScheme::Palette).unwrap(), vec![s]);
        f.data[0] = 7;
        assert!(matches!(decode_oracle(&f, ColorScheme::Palette), Err(Error::Decode { row: 0, col: 0, .. })));
    }

    #[test]
    fn intensity_shades_decode_exactly() {
        for level in 0..=INTENSITY_LEVELS {
            let c = ObjColor::Intensity(level);
            assert_eq!(color_from_rgb(rgb(c), ColorScheme::Intensity), Some(c));
        }
    }

    #[test]
    fn png_has_signature() {
        let png = Frame::blank(5).to_png().unwrap();
        assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
    }
}
