use proptest::prelude::*;
use wms_core::interactive::{encode_data, read_frame, Decoder, Frame, MAX_FRAME};

fn frames() -> impl Strategy<Value = Vec<Frame>> {
    prop::collection::vec(
        (0u8..3, prop::collection::vec(any::<u8>(), 0..300)).prop_map(|(s, p)| Frame::data(s, p)),
        0..20,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn frames_reassemble_across_any_split(fs in frames(), cuts in prop::collection::vec(any::<prop::sample::Index>(), 0..12)) {
        let bytes: Vec<u8> = fs.iter().flat_map(Frame::encode).collect();
        let mut points: Vec<usize> = cuts.iter().map(|i| i.index(bytes.len() + 1)).collect();
        points.push(0);
        points.push(bytes.len());
        points.sort_unstable();
        let mut dec = Decoder::new();
        let mut got = Vec::new();
        for w in points.windows(2) {
            got.extend(dec.push(&bytes[w[0]..w[1]]).unwrap());
        }
        prop_assert_eq!(dec.pending(), 0);
        prop_assert_eq!(&got, &fs);

        let mut r = std::io::Cursor::new(bytes);
        let mut read = Vec::new();
        while let Some(f) = read_frame(&mut r).unwrap() {
            read.push(f);
        }
        prop_assert_eq!(read, fs);
    }

    #[test]
    fn long_data_is_split_and_rejoined(len in 0usize..(3 * MAX_FRAME), stream in 1u8..3) {
        let data: Vec<u8> = (0..len).map(|i| (i * 31 % 251) as u8).collect();
        let mut dec = Decoder::new();
        let frames = dec.push(&encode_data(stream, &data)).unwrap();
        prop_assert!(frames.iter().all(|f| f.stream == stream && !f.is_eof() && f.payload.len() <= MAX_FRAME));
        let joined: Vec<u8> = frames.into_iter().flat_map(|f| f.payload).collect();
        prop_assert_eq!(joined, data);
    }
}
