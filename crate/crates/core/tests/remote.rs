use std::net::{TcpListener, TcpStream};
use std::sync::Arc;

use segxai::attribution::{attribute, Method};
use segxai::model::{forward, proxy_gradient, Endpoint, ModelError, Nonlinearity, RemoteModel, SegmentationModel};
use segxai::protocol::{self, read_frame, serve_listener, write_frame, Frame};
use segxai::synthetic::smooth_volume;
use segxai::volume::{argmax_masks, Dims};
use segxai::{RngSpec, SyntheticModel, SyntheticModelSpec};

fn start(model: Arc<dyn SegmentationModel>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || serve_listener(model, listener));
    addr
}

fn f32_close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-6 * x.abs().max(1.0))
}

#[test]
fn remote_model_matches_local() {
    let dims = Dims::new(5, 4, 3);
    let local = Arc::new(SyntheticModel::new(SyntheticModelSpec::random(dims, 3, Nonlinearity::SmoothSaturating, 2)).unwrap());
    let addr = start(local.clone());
    let remote = RemoteModel::connect(&addr.parse::<Endpoint>().unwrap()).unwrap();
    assert_eq!(remote.info().dims, dims);
    assert_eq!(remote.info().num_classes, 3);
    assert!(remote.info().has_gradient);

    let x = smooth_volume(dims, 9);
    let (la, lb) = (forward(local.as_ref(), &x).unwrap(), forward(&remote, &x).unwrap());
    assert_eq!(la, lb);
    let masks = argmax_masks(&la);
    for (c, mask) in masks.iter().enumerate().filter(|(_, m)| !m.is_empty()) {
        let ga = proxy_gradient(local.as_ref(), &x, c, mask).unwrap();
        let gb = proxy_gradient(&remote, &x, c, mask).unwrap();
        assert!(f32_close(&ga, &gb), "class {c}");
        let method = Method::smoothgrad();
        let ea = attribute(local.as_ref(), &x, c, mask, &method, RngSpec::new(4)).unwrap();
        let eb = attribute(&remote, &x, c, mask, &method, RngSpec::new(4)).unwrap();
        assert!(f32_close(&ea.data, &eb.data), "SmoothGrad class {c}");
    }
}

#[test]
fn wrong_dims_are_rejected_before_sending() {
    let local = Arc::new(SyntheticModel::new(SyntheticModelSpec::random(Dims::cube(3), 2, Nonlinearity::Identity, 1)).unwrap());
    let remote = RemoteModel::connect(&start(local).parse::<Endpoint>().unwrap()).unwrap();
    let err = forward(&remote, &smooth_volume(Dims::cube(4), 1)).unwrap_err();
    assert!(matches!(err, ModelError::DimMismatch { .. }));
}

#[test]
fn server_answers_bad_requests_with_errors() {
    let local = Arc::new(SyntheticModel::new(SyntheticModelSpec::random(Dims::cube(2), 2, Nonlinearity::Identity, 1)).unwrap());
    let mut stream = TcpStream::connect(start(local)).unwrap();
    let mut ask = |frame: Frame| {
        write_frame(&mut stream, &frame).unwrap();
        read_frame(&mut stream).unwrap().unwrap()
    };
    // 8 voxels expected, 3 sent
    assert_eq!(ask(Frame::new(protocol::FORWARD, vec![0; 12])).msg_type, protocol::ERROR);
    let mut bad_class = 9u32.to_le_bytes().to_vec();
    bad_class.extend(vec![0; 8 * 4 + 8]);
    let reply = ask(Frame::new(protocol::GRADIENT, bad_class));
    assert_eq!(reply.msg_type, protocol::ERROR);
    assert!(String::from_utf8(reply.payload).unwrap().contains("out of range"));
    assert_eq!(ask(Frame::new(200, vec![1, 2])).msg_type, protocol::ERROR);
    let info = ask(Frame::new(protocol::HELLO, vec![]));
    assert_eq!(info.msg_type, protocol::INFO);
    let msg: protocol::InfoMessage = serde_json::from_slice(&info.payload).unwrap();
    assert_eq!(msg.dims, [2, 2, 2]);
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let err = RemoteModel::connect(&"127.0.0.1:1".parse::<Endpoint>().unwrap()).unwrap_err();
    assert!(matches!(err, ModelError::Transport(_)));
}
