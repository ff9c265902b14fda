use std::path::Path;

use mfp3d::formats::*;
use mfp3d::geometry::{DepthMap, Frame, Image, Mask, PointCloud, TriangleMesh};
use mfp3d::Error;
use proptest::prelude::*;

fn p() -> &'static Path {
    Path::new("prop")
}

fn finite_f32() -> impl Strategy<Value = f32> {
    prop_oneof![
        -1e6f32..1e6f32,
        any::<f32>().prop_filter("finite", |v| v.is_finite()),
    ]
}

fn point_f32() -> impl Strategy<Value = [f64; 3]> {
    [finite_f32(), finite_f32(), finite_f32()].prop_map(|v| v.map(f64::from))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ply_round_trips(points in prop::collection::vec(point_f32(), 0..40)) {
        let cloud = PointCloud::new(points, Frame::Metric).unwrap();
        let back = decode_ply(p(), &encode_ply(&cloud), Frame::Metric).unwrap();
        prop_assert_eq!(back, cloud);
    }

    #[test]
    fn obj_round_trips(
        verts in prop::collection::vec([any::<f64>(), any::<f64>(), any::<f64>()], 1..20),
        raw in prop::collection::vec([any::<u32>(), any::<u32>(), any::<u32>()], 0..20),
    ) {
        let verts: Vec<[f64; 3]> = verts.into_iter().filter(|v| v.iter().all(|c| c.is_finite())).collect();
        prop_assume!(!verts.is_empty());
        let n = verts.len() as u32;
        let tris = raw
            .into_iter()
            .map(|t| t.map(|i| i % n))
            .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
            .collect();
        let mesh = TriangleMesh::new(verts, tris).unwrap();
        let back = decode_obj(p(), &encode_obj(&mesh)).unwrap();
        prop_assert_eq!(back, mesh);
    }

    #[test]
    fn depth_round_trips(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
        let values: Vec<f32> = (0..w * h)
            .map(|i| f32::from_bits((seed.wrapping_mul(i as u64 + 1) >> 32) as u32))
            .map(|v| if v.is_finite() { v } else { 0.0 })
            .collect();
        let depth = DepthMap::new(w, h, values).unwrap();
        let back = decode_depth(p(), &encode_depth(&depth)).unwrap();
        prop_assert_eq!(back.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        depth.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!((back.width(), back.height()), (w, h));
    }

    #[test]
    fn ppm_round_trips_on_the_byte_grid(w in 1usize..10, h in 1usize..10, bytes in prop::collection::vec(any::<u8>(), 300)) {
        let pixels = (0..w * h)
            .map(|i| [0, 1, 2].map(|c| bytes[(3 * i + c) % bytes.len()] as f32 / 255.0))
            .collect();
        let img = Image::new(w, h, pixels).unwrap();
        let encoded = encode_ppm(&img);
        let back = decode_ppm(p(), &encoded).unwrap();
        prop_assert_eq!(&back, &img);
        prop_assert_eq!(encode_ppm(&back), encoded);
    }

    #[test]
    fn pgm_round_trips(w in 1usize..16, h in 1usize..16, bits in any::<u64>()) {
        let values = (0..w * h).map(|i| bits >> (i % 64) & 1 == 1).collect();
        let mask = Mask::new(w, h, values).unwrap();
        prop_assert_eq!(decode_pgm(p(), &encode_pgm(&mask)).unwrap(), mask);
    }

    #[test]
    fn truncated_depth_is_a_format_error(w in 1usize..8, h in 1usize..8, cut in 1usize..4) {
        let depth = DepthMap::new(w, h, vec![1.5; w * h]).unwrap();
        let bytes = encode_depth(&depth);
        let r = decode_depth(p(), &bytes[..bytes.len() - cut]);
        let is_format = matches!(r, Err(Error::Format { .. }));
        prop_assert!(is_format);
    }
}

#[test]
fn malformed_headers_are_format_errors() {
    let cases: Vec<(&str, Result<(), Error>)> = vec![
        ("ply magic", decode_ply(p(), "plx\nformat ascii 1.0\n", Frame::Metric).map(drop)),
        (
            "ply count",
            decode_ply(
                p(),
                "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n",
                Frame::Metric,
            )
            .map(drop),
        ),
        ("obj quad", decode_obj(p(), "v 0 0 0\nf 1 1 1 1\n").map(drop)),
        ("depth header", decode_depth(p(), b"DEPTH x 2\n").map(drop)),
        ("ppm magic", decode_ppm(p(), b"P3\n1 1\n255\n\0\0\0").map(drop)),
        ("pgm maxval", decode_pgm(p(), b"P5\n1 1\n65535\n\0\0").map(drop)),
    ];
    for (name, r) in cases {
        assert!(matches!(r, Err(Error::Format { .. })), "{name}: {r:?}");
    }
}

mod checkpoint {
    use super::*;
    use mfp3d::training::{decode_checkpoint, encode_checkpoint, Checkpoint, Model, Modality, TrainConfig};

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn checkpoints_round_trip(
            seed in any::<u64>(),
            rgb in any::<bool>(),
            dim in 1usize..6,
            scale in 0.01f64..1e4,
            history in prop::collection::vec(0.0f64..1e4, 0..5),
            noise in prop::collection::vec(finite_f32(), 1..64),
        ) {
            let cfg = TrainConfig {
                modality: if rgb { Modality::PcRgb } else { Modality::PcOnly },
                points: 8,
                k: 3,
                point_mlp: vec![4],
                image_size: 4,
                conv_filters: vec![2],
                feature_dim: dim,
                seed,
                ..TrainConfig::default()
            };
            let mut model = Model::new(&cfg, scale).unwrap();
            let names: Vec<String> = model.params.names().map(String::from).collect();
            for (i, name) in names.iter().enumerate() {
                let n = model.params.get(name).unwrap().numel();
                let data = (0..n).map(|j| noise[(i * 7 + j) % noise.len()] as f64).collect();
                model.params.set_data(name, data).unwrap();
            }
            let ckpt = Checkpoint { model, history };
            let bytes = encode_checkpoint(&ckpt);
            let back = decode_checkpoint(&bytes, p()).unwrap();
            prop_assert_eq!(&back, &ckpt);
            prop_assert_eq!(encode_checkpoint(&back), bytes);
        }
    }
}
