use motionboost::flow::{
    decode_flo, encode_color_wheel, encode_flo, read_flo, write_flo, MaxMagnitude,
};
use motionboost::FlowField;
use ndarray::Array2;
use proptest::prelude::*;

fn field_strategy() -> impl Strategy<Value = FlowField> {
    (1usize..8, 1usize..8).prop_flat_map(|(h, w)| {
        (
            prop::collection::vec(-50.0f32..50.0, h * w),
            prop::collection::vec(-50.0f32..50.0, h * w),
        )
            .prop_map(move |(u, v)| {
                FlowField::new(
                    Array2::from_shape_vec((h, w), u).unwrap(),
                    Array2::from_shape_vec((h, w), v).unwrap(),
                )
                .unwrap()
            })
    })
}

fn image_bits(f: &FlowField, m: MaxMagnitude) -> Vec<u32> {
    encode_color_wheel(f, m)
        .unwrap()
        .pixels()
        .iter()
        .map(|v| v.to_bits())
        .collect()
}

proptest! {
    #[test]
    fn flo_round_trip_is_bit_exact(f in field_strategy()) {
        let bytes = encode_flo(&f);
        prop_assert_eq!(bytes.len(), 12 + 8 * f.height() * f.width());
        let back = decode_flo(&bytes).unwrap();
        prop_assert_eq!(back.dims(), f.dims());
        for (a, b) in f.u.iter().zip(back.u.iter()).chain(f.v.iter().zip(back.v.iter())) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn any_truncation_is_rejected(f in field_strategy(), cut in 1usize..16) {
        let bytes = encode_flo(&f);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode_flo(&bytes[..keep]).is_err());
    }

    #[test]
    fn rendering_is_in_range_and_scale_free(f in field_strategy()) {
        let img = encode_color_wheel(&f, MaxMagnitude::Auto).unwrap();
        prop_assert!(img.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(img.dims(), f.dims());
        // A power-of-two rescale keeps every normalized vector exact.
        let scaled = FlowField::new(f.u.mapv(|x| x * 4.0), f.v.mapv(|x| x * 4.0)).unwrap();
        prop_assert_eq!(image_bits(&f, MaxMagnitude::Auto), image_bits(&scaled, MaxMagnitude::Auto));
    }

    #[test]
    fn larger_fixed_scale_desaturates(f in field_strategy(), k in 1.5f32..10.0) {
        let m = f.max_valid_magnitude().unwrap();
        prop_assume!(m > 1e-3);
        let tight = encode_color_wheel(&f, MaxMagnitude::Fixed(m)).unwrap();
        let loose = encode_color_wheel(&f, MaxMagnitude::Fixed(m * k)).unwrap();
        // Loose scaling moves every channel toward white.
        for (a, b) in tight.pixels().iter().zip(loose.pixels().iter()) {
            prop_assert!(*b >= *a - 1e-5);
        }
    }
}

#[test]
fn file_round_trip_and_bad_tag() {
    let dir = tempfile::tempdir().unwrap();
    let f = FlowField::uniform(3, 5, 1.5, -2.25).unwrap();
    let path = dir.path().join("a/b.flo");
    write_flo(&path, &f).unwrap();
    let back = read_flo(&path).unwrap();
    assert_eq!(back.u, f.u);
    assert_eq!(back.v, f.v);

    let mut bytes = encode_flo(&f);
    bytes[0] = b'X';
    assert!(decode_flo(&bytes).is_err());
    assert!(read_flo(&dir.path().join("missing.flo")).is_err());
}

#[test]
fn non_positive_fixed_scale_rejected() {
    let f = FlowField::uniform(2, 2, 1.0, 0.0).unwrap();
    assert!(encode_color_wheel(&f, MaxMagnitude::Fixed(0.0)).is_err());
    assert!(encode_color_wheel(&f, MaxMagnitude::Fixed(-1.0)).is_err());
}
