use std::os::unix::net::UnixStream;
use std::thread;

use inferguard::data::synth_images;
use inferguard::models::{build_split_cnn, train_classifier};
use inferguard::nn::{Sequential, Tensor, TrainConfig};
use inferguard::protocol::{
    collaborative_infer, collaborative_train, deserialize, new_tap, serialize, serve, DType, InferenceServer,
    MsgType, StreamChannel, Transcript, WireMessage,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CUT_SHAPES: [[usize; 3]; 3] = [[32, 16, 16], [32, 8, 8], [32, 4, 4]];

fn random_message(rng: &mut ChaCha8Rng, i: usize) -> WireMessage {
    let shape = CUT_SHAPES[i % 3];
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1e3..1e3) * rng.random::<f64>().powi(8)).collect();
    let t = Tensor::new(shape.to_vec(), data).unwrap();
    let (ty, dt) = if i % 2 == 0 { (MsgType::Activation, DType::F32) } else { (MsgType::Gradient, DType::F64) };
    WireMessage::new(ty, dt, rng.random(), &t).unwrap()
}

#[test]
fn thousand_random_tensors_round_trip_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..1000 {
        let msg = random_message(&mut rng, i);
        let bytes = serialize(&msg);
        assert_eq!(bytes.len(), msg.encoded_len());
        let back = deserialize(&bytes).unwrap();
        let bits = |m: &WireMessage| m.tensor().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&msg));
        assert_eq!(back, msg);
    }
}

#[test]
fn every_single_byte_corruption_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..300 {
        let msg = random_message(&mut rng, i);
        let mut bytes = serialize(&msg);
        let at = rng.random_range(0..bytes.len());
        bytes[at] ^= rng.random_range(1..=255u8);
        assert!(deserialize(&bytes).is_err(), "flip at byte {at} accepted");
    }
    let bytes = serialize(&random_message(&mut rng, 0));
    assert!(deserialize(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn header_of_a_cut_four_activation() {
    let t = Tensor::zeros(&[32, 16, 16]);
    let bytes = serialize(&WireMessage::new(MsgType::Activation, DType::F32, 5, &t).unwrap());
    // 8 fixed bytes, 3 dims, seq, payload, crc
    assert_eq!(bytes.len(), 8 + 12 + 8 + 8192 * 4 + 4);
    assert_eq!(&bytes[..4], b"SPLT");
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 32);
    let crc = crc32fast::hash(&bytes[..bytes.len() - 4]);
    assert_eq!(u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap()), crc);
}

fn halves(cut: usize) -> (Sequential, Sequential) {
    build_split_cnn(16, 2, cut, 16, 4).unwrap().into_halves()
}

#[test]
fn inference_over_a_socket_matches_in_process() {
    let (front, back) = halves(4);
    let img = synth_images(1, 16, 3).all().sample_tensor(0);
    let local = collaborative_infer(&front, &back, &img, None).unwrap();

    let (a, b) = UnixStream::pair().unwrap();
    let server = thread::spawn(move || serve(b, &mut InferenceServer::new(back)));
    let mut ch = StreamChannel::new(a);
    let v = front.predict(&img.reshape(vec![1, 1, 16, 16]).unwrap()).unwrap().sample_tensor(0);
    let reply = ch.request(&WireMessage::new(MsgType::Activation, DType::F32, 0, &v).unwrap()).unwrap();
    drop(ch);
    server.join().unwrap().unwrap();
    assert_eq!(reply.msg_type(), MsgType::Result);
    assert_eq!(reply.tensor().data(), local.as_slice());
}

#[test]
fn one_inference_leaves_two_messages_on_the_tap() {
    let (front, back) = halves(2);
    let tap = new_tap();
    let img = synth_images(1, 16, 1).all().sample_tensor(0);
    let probs = collaborative_infer(&front, &back, &img, Some(tap.clone())).unwrap();
    let t = tap.lock().unwrap().clone();
    assert_eq!(t.len(), 2);
    assert_eq!(t.messages()[0].msg_type(), MsgType::Activation);
    assert_eq!(t.messages()[0].tensor().shape(), &[32, 8, 8]);
    assert_eq!(t.messages()[1].tensor().data(), probs.as_slice());
    // tapping does not change the outcome
    assert_eq!(collaborative_infer(&front, &back, &img, None).unwrap(), probs);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.bin");
    t.save(&path).unwrap();
    assert_eq!(Transcript::load(&path).unwrap(), t);
}

#[test]
fn split_training_is_bit_identical_after_three_epochs() {
    let data = synth_images(24, 16, 9);
    let cfg = TrainConfig { epochs: 3, batch_size: 8, seed: 5, ..TrainConfig::default() };
    for cut in [2, 4, 6] {
        let (front, back) = halves(cut);
        let tap = new_tap();
        let split =
            collaborative_train(front.clone(), back.clone(), &data.all(), data.labels(), &cfg, Some(tap.clone())).unwrap();
        let mut whole = Sequential::concat(front, back).unwrap();
        let trace = train_classifier(&mut whole, &data.all(), data.labels(), &cfg).unwrap();
        assert_eq!(Sequential::concat(split.front, split.back).unwrap(), whole, "cut {cut}");
        assert_eq!(split.trace, trace);
        // 3 batches per epoch, activation and gradient each
        let t = tap.lock().unwrap();
        assert_eq!(t.len(), 18);
        assert_eq!(t.of_type(MsgType::Gradient).count(), 9);
        assert!(t.messages().iter().all(|m| m.dtype() == DType::F64));
    }
}

#[test]
fn single_batch_exchanges_two_messages() {
    let data = synth_images(4, 16, 2);
    let (front, back) = halves(6);
    let tap = new_tap();
    let cfg = TrainConfig { epochs: 1, batch_size: 4, ..TrainConfig::default() };
    collaborative_train(front, back, &data.all(), data.labels(), &cfg, Some(tap.clone())).unwrap();
    assert_eq!(tap.lock().unwrap().len(), 2);
}

#[test]
fn empty_training_input_is_an_error() {
    let (front, back) = halves(2);
    let x = Tensor::zeros(&[0, 1, 16, 16]);
    assert!(collaborative_train(front, back, &x, &[], &TrainConfig::default(), None).is_err());
}
