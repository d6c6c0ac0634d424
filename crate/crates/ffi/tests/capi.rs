use std::ffi::{CStr, CString};
use std::ptr;

use zonotrain_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(zt_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn unit_box() -> *mut ZtZonotope {
    let c = [0.0, 0.0];
    let g = [1.0, 0.0, 0.0, 1.0];
    let mut z = ptr::null_mut();
    let s = unsafe {
        zt_cz_new(
            2,
            2,
            0,
            c.as_ptr(),
            g.as_ptr(),
            ptr::null(),
            ptr::null(),
            &mut z,
        )
    };
    assert_eq!(s, ZtStatus::Ok);
    z
}

fn from_json(json: &str) -> *mut ZtZonotope {
    let json = CString::new(json).unwrap();
    let mut z = ptr::null_mut();
    assert_eq!(
        unsafe { zt_cz_from_json(json.as_ptr(), &mut z) },
        ZtStatus::Ok
    );
    z
}

fn network(json: &str) -> *mut ZtNetwork {
    let json = CString::new(json).unwrap();
    let mut n = ptr::null_mut();
    assert_eq!(
        unsafe { zt_network_from_json(json.as_ptr(), &mut n) },
        ZtStatus::Ok
    );
    n
}

const IDENTITY: &str = r#"{"layers":[{"W":[[1.0,0.0],[0.0,1.0]],"w":[0.0,0.0]}]}"#;

#[test]
fn json_round_trip_through_handles() {
    let z = unit_box();
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(zt_cz_to_json(z, &mut s), ZtStatus::Ok);
        let text = CStr::from_ptr(s).to_str().unwrap().to_owned();
        assert_eq!(
            text,
            r#"{"c":[0.0,0.0],"G":[[1.0,0.0],[0.0,1.0]],"A":[],"b":[]}"#
        );
        zt_string_free(s);
        zt_cz_free(z);
    }
}

#[test]
fn shape_affine_and_intersection() {
    let z = unit_box();
    let w = [2.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let b = [1.0, 0.0, -1.0];
    let mut img = ptr::null_mut();
    let mut both = ptr::null_mut();
    let (mut dim, mut ng, mut nc) = (0, 0, 0);
    unsafe {
        assert_eq!(
            zt_cz_affine(z, 3, w.as_ptr(), b.as_ptr(), &mut img),
            ZtStatus::Ok
        );
        assert_eq!(zt_cz_shape(img, &mut dim, &mut ng, &mut nc), ZtStatus::Ok);
        assert_eq!((dim, ng, nc), (3, 2, 0));

        assert_eq!(zt_cz_intersect(z, z, &mut both), ZtStatus::Ok);
        assert_eq!(zt_cz_shape(both, &mut dim, &mut ng, &mut nc), ZtStatus::Ok);
        assert_eq!((dim, ng, nc), (2, 4, 2));
        for h in [z, img, both] {
            zt_cz_free(h);
        }
    }
}

#[test]
fn emptiness_and_membership() {
    let z = unit_box();
    let far = from_json(r#"{"c":[5.0,5.0],"G":[[1.0,0.0],[0.0,1.0]]}"#);
    let mut inter = ptr::null_mut();
    let (mut v, mut empty, mut inside) = (0.0, -1, -1);
    unsafe {
        assert_eq!(zt_cz_check_empty(z, &mut v, &mut empty), ZtStatus::Ok);
        assert_eq!((v, empty), (0.0, 0));

        assert_eq!(zt_cz_intersect(z, far, &mut inter), ZtStatus::Ok);
        assert_eq!(zt_cz_check_empty(inter, &mut v, &mut empty), ZtStatus::Ok);
        assert_eq!(empty, 1);
        assert!((v - 2.5).abs() < 1e-9);

        let p = [0.5, -1.0];
        assert_eq!(
            zt_cz_contains(z, p.as_ptr(), 1e-9, &mut inside),
            ZtStatus::Ok
        );
        assert_eq!(inside, 1);
        let q = [1.5, 0.0];
        assert_eq!(
            zt_cz_contains(z, q.as_ptr(), 1e-9, &mut inside),
            ZtStatus::Ok
        );
        assert_eq!(inside, 0);
        for h in [z, far, inter] {
            zt_cz_free(h);
        }
    }
}

#[test]
fn network_forward_and_reach() {
    let net = network(
        r#"{"layers":[{"W":[[1.0,0.0],[0.0,1.0]],"w":[0.0,0.0]},{"W":[[1.0,1.0]],"w":[0.0]}]}"#,
    );
    let x0 = unit_box();
    let mut r = ptr::null_mut();
    let (mut n_in, mut n_out, mut len) = (0, 0, 0);
    let mut y = [0.0];
    unsafe {
        assert_eq!(zt_network_shape(net, &mut n_in, &mut n_out), ZtStatus::Ok);
        assert_eq!((n_in, n_out), (2, 1));
        let x = [0.5, -0.25];
        assert_eq!(
            zt_network_forward(net, x.as_ptr(), y.as_mut_ptr()),
            ZtStatus::Ok
        );
        assert_eq!(y[0], 0.5);

        assert_eq!(zt_reach(net, x0, &mut r), ZtStatus::Ok);
        assert_eq!(zt_reach_len(r, &mut len), ZtStatus::Ok);
        assert_eq!(len, 4);
        let mut piece = ptr::null_mut();
        assert_eq!(zt_reach_piece(r, 0, &mut piece), ZtStatus::Ok);
        let mut dim = 0;
        assert_eq!(
            zt_cz_shape(piece, &mut dim, ptr::null_mut(), ptr::null_mut()),
            ZtStatus::Ok
        );
        assert_eq!(dim, 1);
        assert_eq!(
            zt_reach_piece(r, len, &mut ptr::null_mut()),
            ZtStatus::InvalidArgument
        );
        assert!(last_error().contains("out of range"));
        zt_cz_free(piece);
        zt_reach_free(r);
        zt_network_free(net);
        zt_cz_free(x0);
    }
}

#[test]
fn verify_identity_network() {
    let net = network(IDENTITY);
    let x0 = unit_box();
    let far = from_json(r#"{"c":[100.0,100.0],"G":[[0.5,0.0],[0.0,0.5]]}"#);
    let (mut safe, mut loss) = (-1, 0.0);
    unsafe {
        let sets = [far as *const ZtZonotope];
        assert_eq!(
            zt_verify(net, x0, sets.as_ptr(), 1, &mut safe, &mut loss),
            ZtStatus::Ok
        );
        assert_eq!(safe, 1);
        assert!(loss < 0.0);

        let same = [x0 as *const ZtZonotope];
        assert_eq!(
            zt_verify(net, x0, same.as_ptr(), 1, &mut safe, &mut loss),
            ZtStatus::Ok
        );
        assert_eq!(safe, 0);
        assert!((loss - 1.0).abs() < 1e-9);
        zt_network_free(net);
        zt_cz_free(x0);
        zt_cz_free(far);
    }
}

#[test]
fn error_codes() {
    let mut z = ptr::null_mut();
    unsafe {
        assert_eq!(
            zt_cz_new(
                2,
                1,
                0,
                ptr::null(),
                ptr::null(),
                ptr::null(),
                ptr::null(),
                &mut z
            ),
            ZtStatus::NullPointer
        );
        assert!(last_error().contains("null"));

        let bad = CString::new("{not json").unwrap();
        assert_eq!(zt_cz_from_json(bad.as_ptr(), &mut z), ZtStatus::Parse);

        let net = network(IDENTITY);
        let line = from_json(r#"{"c":[0.0],"G":[[1.0]]}"#);
        let mut r = ptr::null_mut();
        assert_eq!(zt_reach(net, line, &mut r), ZtStatus::DimensionMismatch);
        assert!(!last_error().is_empty());

        let x0 = unit_box();
        assert_eq!(zt_reach(net, x0, &mut r), ZtStatus::Ok);
        assert!(last_error().is_empty());
        zt_reach_free(r);
        zt_cz_free(x0);
        zt_cz_free(line);
        zt_network_free(net);

        zt_cz_free(ptr::null_mut());
        zt_string_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/zonotrain.h");
    for name in [
        "zt_last_error_message",
        "zt_string_free",
        "zt_cz_new",
        "zt_cz_from_json",
        "zt_cz_to_json",
        "zt_cz_free",
        "zt_cz_shape",
        "zt_cz_affine",
        "zt_cz_intersect",
        "zt_cz_check_empty",
        "zt_cz_contains",
        "zt_network_from_json",
        "zt_network_free",
        "zt_network_shape",
        "zt_network_forward",
        "zt_reach",
        "zt_reach_len",
        "zt_reach_piece",
        "zt_reach_free",
        "zt_verify",
    ] {
        assert!(
            header.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
    assert!(header.contains("typedef struct ZtZonotope ZtZonotope;"));
}
