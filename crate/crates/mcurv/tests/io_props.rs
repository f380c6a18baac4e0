use mcurv::patchio::{encode_netpbm, parse_netpbm, parse_patch, parse_rows, write_matrix_csv};
use mcurv_core::ImageMatrix;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6f64..1e6,
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
    ]
}

proptest! {
    #[test]
    fn patch_csv_round_trip(rows in 2usize..12, cols in 2usize..9, data in prop::collection::vec(finite(), 108)) {
        let m = DMatrix::from_fn(rows, cols, |i, j| data[i * cols + j]);
        let mut buf = Vec::new();
        write_matrix_csv(&m, &mut buf).unwrap();
        let back = parse_patch(buf.as_slice(), None).unwrap();
        prop_assert_eq!(back.points(), &m);
    }

    #[test]
    fn csv_parser_is_total(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = parse_rows(bytes.as_slice());
        let _ = parse_patch(bytes.as_slice(), Some(&bytes));
    }

    #[test]
    fn netpbm_parser_is_total(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = parse_netpbm(&bytes);
    }

    #[test]
    fn netpbm_headers_with_noise_are_total(kind in 1u8..7, w in 0usize..5, h in 0usize..5, max in 0u32..70000, tail in prop::collection::vec(any::<u8>(), 0..64)) {
        let mut bytes = format!("P{kind}\n{w} {h}\n{max}\n").into_bytes();
        bytes.extend(tail);
        let _ = parse_netpbm(&bytes);
    }

    #[test]
    fn quantized_images_round_trip(rows in 1usize..6, cols in 1usize..6, rgb in any::<bool>(), data in prop::collection::vec(0u8..=255, 108)) {
        let c = if rgb { 3 } else { 1 };
        let channels = (0..c)
            .map(|k| DMatrix::from_fn(rows, cols, |i, j| f64::from(data[(k * rows + i) * cols + j])))
            .collect();
        let img = ImageMatrix::new(channels).unwrap();
        let back = parse_netpbm(&encode_netpbm(&img)).unwrap();
        prop_assert_eq!(back, img);
    }
}
