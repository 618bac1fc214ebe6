use causim::chemistry::{ChemAction, ChemConfig, ChemWorld};
use causim::graph_gen::GraphSpec;
use causim::noise::{rng_for, NoiseCursor};
use causim::physics::{reset, Cell, ObjColor, PhysicsConfig, PhysicsSetting, PhysicsState};
use causim::render::{
    decode_chem, decode_oracle, decode_physics, render_chem, render_physics, rgb, ColorScheme, Frame, CELL_PX, PALETTE,
};
use causim::Error;
use proptest::prelude::*;

const GOLDEN_PNG: &[u8] = include_bytes!("fixtures/golden_physics.png");

fn golden_state() -> PhysicsState {
    PhysicsState {
        positions: vec![Cell::new(0, 0), Cell::new(2, 3), Cell::new(4, 1)],
        weights: vec![0.8, 0.5, 0.3],
        colors: vec![ObjColor::Intensity(160), ObjColor::Intensity(100), ObjColor::Intensity(60)],
        shapes: vec![0, 1, 2],
    }
}

#[test]
fn golden_png_bytes_are_stable() {
    let bytes = render_physics(&golden_state(), 5).to_png().unwrap();
    assert_eq!(bytes, GOLDEN_PNG);
}

#[test]
fn golden_png_pixels() {
    let decoder = png::Decoder::new(std::io::Cursor::new(GOLDEN_PNG));
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    assert_eq!((info.width, info.height), (50, 50));
    assert_eq!(info.color_type, png::ColorType::Rgb);
    let px = |x: usize, y: usize| [buf[(y * 50 + x) * 3], buf[(y * 50 + x) * 3 + 1], buf[(y * 50 + x) * 3 + 2]];
    // the square fills its tile inside a one-pixel border, b = 255 - 160
    assert_eq!(px(0, 0), [0, 0, 0]);
    assert_eq!(px(1, 1), [23, 47, 95]);
    assert_eq!(px(8, 8), [23, 47, 95]);
    assert_eq!(px(9, 9), [0, 0, 0]);
    // empty tile
    assert_eq!(px(45, 5), [0, 0, 0]);
    // centre of the circle at tile (2, 3)
    assert_eq!(px(35, 25), [38, 77, 155]);
}

#[test]
fn palette_is_well_separated() {
    for (i, a) in PALETTE.iter().enumerate() {
        assert_ne!(*a, [0, 0, 0]);
        for b in &PALETTE[i + 1..] {
            let gap = a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)).max().unwrap();
            assert!(gap >= 32);
        }
    }
    assert_eq!(rgb(ObjColor::Intensity(200)), [13, 27, 55]);
}

#[test]
fn corrupted_frames_are_reported() {
    let mut frame = render_physics(&golden_state(), 5);
    frame.data[(5 * 50 + 5) * 3] ^= 0x40;
    assert!(matches!(decode_oracle(&frame, ColorScheme::Intensity), Err(Error::Decode { row: 0, col: 0, .. })));
    let bad = Frame { width: 49, height: 49, data: vec![0; 49 * 49 * 3] };
    assert!(decode_oracle(&bad, ColorScheme::Palette).is_err());
    assert_eq!(decode_oracle(&Frame::blank(5), ColorScheme::Palette).unwrap(), vec![]);
    assert_eq!(Frame::blank(5).width, 5 * CELL_PX);
}

fn any_setting() -> impl Strategy<Value = PhysicsSetting> {
    prop_oneof![
        Just(PhysicsSetting::Observed),
        Just(PhysicsSetting::Unobserved),
        Just(PhysicsSetting::FixedUnobserved)
    ]
}

proptest! {
    #[test]
    fn physics_round_trip(m in 1usize..=5, setting in any_setting(), seed in any::<u64>()) {
        let s = reset(&PhysicsConfig::new(m, setting, seed), &mut rng_for(&[seed, 1])).unwrap();
        let back = decode_physics(&render_physics(&s, 5), setting).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn chemistry_round_trip(seed in any::<u64>(), node in 0usize..5, color in 0usize..8) {
        let world = ChemWorld::new(ChemConfig::new(GraphSpec::full(5), 8, 1.0, seed)).unwrap();
        let (s, c) = world.reset(NoiseCursor::new(seed), &mut rng_for(&[seed])).unwrap();
        let (s, _) = world.step(&s, ChemAction { node, color }, c).unwrap();
        let back = decode_chem(&render_chem(&s, 5), world.static_positions()).unwrap();
        prop_assert_eq!(back, s);
    }
}
