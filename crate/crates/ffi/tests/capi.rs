use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use prime_core::mixmodel::{mix, AbundanceMatrix, EndmemberMatrix};
use prime_core::protocol::{lins_protocol, synth_reference, write_cube, FieldConfig, SampleType};
use prime_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(prime_last_error()) }.to_string_lossy().into_owned()
}

fn small_msi() -> (prime_core::mixmodel::ImageCube, EndmemberMatrix) {
    let r = synth_reference(5, 16, 16, 8, 4, &FieldConfig::default()).unwrap();
    lins_protocol(&r.endmembers, &r.abundances, 2).unwrap()
}

fn new_cube(c: &prime_core::mixmodel::ImageCube) -> *mut PrimeCube {
    let mut h = ptr::null_mut();
    let st = unsafe { prime_cube_new(c.bands(), c.height(), c.width(), c.data().as_ptr(), c.data().len(), &mut h) };
    assert_eq!(st, PrimeStatus::Ok, "{}", last_error());
    h
}

fn read_result(r: *const PrimeUnmixing) -> (nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>) {
    let (mut m, mut n, mut l) = (0, 0, 0);
    assert_eq!(unsafe { prime_unmixing_dims(r, &mut m, &mut n, &mut l) }, PrimeStatus::Ok);
    let mut b = vec![0.0; m * n];
    let mut s = vec![0.0; n * l];
    unsafe {
        assert_eq!(prime_unmixing_endmembers(r, b.as_mut_ptr(), b.len()), PrimeStatus::Ok);
        assert_eq!(prime_unmixing_abundances(r, s.as_mut_ptr(), s.len()), PrimeStatus::Ok);
    }
    (
        nalgebra::DMatrix::from_row_slice(m, n, &b),
        nalgebra::DMatrix::from_row_slice(n, l, &s),
    )
}

#[test]
fn vca_through_the_c_interface_matches_the_library() {
    let (zm, _) = small_msi();
    let cube = new_cube(&zm);
    let mut res = ptr::null_mut();
    let st = unsafe { prime_unmix(cube, PrimeMethod::Vca, 4, ptr::null(), &mut res) };
    assert_eq!(st, PrimeStatus::Ok, "{}", last_error());
    let (b, s) = read_result(res);
    let (b_lib, s_lib) = prime_core::solver::vca_baseline(&zm, 4, 0).unwrap();
    assert_eq!(&b, b_lib.matrix());
    assert_eq!(&s, s_lib.matrix());
    // The row-major copies must reassemble into the library's reconstruction.
    let recon = mix(
        &EndmemberMatrix::new(b).unwrap(),
        &AbundanceMatrix::new(s, zm.height(), zm.width()).unwrap(),
    )
    .unwrap();
    let lib_recon = mix(&b_lib, &s_lib).unwrap();
    assert_eq!(recon, lib_recon);
    unsafe {
        prime_unmixing_free(res);
        prime_cube_free(cube);
    }
}

#[test]
fn prime_runs_with_custom_options() {
    let (zm, _) = small_msi();
    let cube = new_cube(&zm);
    let mut opts = prime_options_default(4);
    opts.outer = 2;
    opts.epochs_first = 3;
    opts.epochs_rest = 2;
    opts.seed = 11;
    let mut res = ptr::null_mut();
    let st = unsafe { prime_unmix(cube, PrimeMethod::Prime, 4, &opts, &mut res) };
    assert_eq!(st, PrimeStatus::Ok, "{}", last_error());
    assert_eq!(last_error(), "");
    let (b, s) = read_result(res);
    assert_eq!(b.shape(), (4, 4));
    assert_eq!(s.shape(), (4, 256));
    assert!(b.iter().chain(s.iter()).all(|v| v.is_finite() && *v >= 0.0));
    unsafe {
        prime_unmixing_free(res);
        prime_cube_free(cube);
    }
}

#[test]
fn defaults_mirror_the_library() {
    let o = prime_options_default(6);
    let c = prime_core::solver::PrimeConfig::from(&o);
    assert_eq!(c, prime_core::solver::PrimeConfig::new(6));
}

#[test]
fn errors_set_status_and_message() {
    let data = [1.0; 12];
    let mut cube = ptr::null_mut();
    let st = unsafe { prime_cube_new(2, 2, 2, data.as_ptr(), data.len(), &mut cube) };
    assert_eq!(st, PrimeStatus::Dimension);
    assert!(cube.is_null());
    assert!(last_error().contains("12 values"), "{}", last_error());

    let st = unsafe { prime_cube_new(2, 2, 2, ptr::null(), 8, &mut cube) };
    assert_eq!(st, PrimeStatus::NullPointer);

    let (zm, _) = small_msi();
    let cube = new_cube(&zm);
    let mut res = ptr::null_mut();
    // Eight virtual bands cannot carry nine sources.
    let st = unsafe { prime_unmix(cube, PrimeMethod::Prime, 9, ptr::null(), &mut res) };
    assert_eq!(st, PrimeStatus::InvalidArgument);
    assert!(res.is_null());
    assert!(!last_error().is_empty());

    let st = unsafe { prime_unmix(cube, PrimeMethod::Vca, 4, ptr::null(), &mut res) };
    assert_eq!(st, PrimeStatus::Ok);
    let mut small = [0.0; 3];
    let st = unsafe { prime_unmixing_endmembers(res, small.as_mut_ptr(), small.len()) };
    assert_eq!(st, PrimeStatus::Dimension);
    unsafe {
        prime_unmixing_free(res);
        prime_cube_free(cube);
        prime_cube_free(ptr::null_mut());
    }
}

#[test]
fn reads_cubes_written_by_the_tool() {
    let dir = tempfile::tempdir().unwrap();
    let (zm, _) = small_msi();
    let base = dir.path().join("zm");
    write_cube(&base, &zm, SampleType::F64le).unwrap();
    let path = CString::new(base.to_str().unwrap()).unwrap();
    let mut cube = ptr::null_mut();
    assert_eq!(unsafe { prime_cube_read(path.as_ptr(), &mut cube) }, PrimeStatus::Ok);
    let (mut p, mut h, mut w) = (0, 0, 0);
    assert_eq!(unsafe { prime_cube_dims(cube, &mut p, &mut h, &mut w) }, PrimeStatus::Ok);
    assert_eq!((p, h, w), (4, 16, 16));
    unsafe { prime_cube_free(cube) };

    let missing = CString::new(dir.path().join("nope").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { prime_cube_read(missing.as_ptr(), &mut cube) }, PrimeStatus::Io);
    assert!(cube.is_null());
}

#[test]
fn version_is_the_package_version() {
    let v = unsafe { CStr::from_ptr(prime_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn compiler(name: &str) -> Option<Command> {
    Command::new(name).arg("--version").output().ok().filter(|o| o.status.success())?;
    Some(Command::new(name))
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"prime.h\"\n\
         int use(const double *d) {\n\
           PrimeCube *c = NULL;\n\
           PrimeOptions o = prime_options_default(6);\n\
           o.hi = false;\n\
           if (prime_cube_new(4, 2, 2, d, 16, &c) != PRIME_STATUS_OK) return 1;\n\
           PrimeUnmixing *r = NULL;\n\
           PrimeStatus s = prime_unmix(c, PRIME_METHOD_VCA, 4, &o, &r);\n\
           prime_unmixing_free(r);\n\
           prime_cube_free(c);\n\
           return (int)s;\n\
         }\n",
    )
    .unwrap();
    let mut checked = 0;
    for (cc, lang) in [("cc", "c"), ("c++", "c++")] {
        let Some(mut cmd) = compiler(cc) else { continue };
        let out = cmd
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg("-I")
            .arg(&include)
            .arg(&src)
            .output()
            .unwrap();
        assert!(out.status.success(), "{cc}: {}", String::from_utf8_lossy(&out.stderr));
        checked += 1;
    }
    if checked == 0 {
        eprintln!("no C compiler found; header check skipped");
    }
}
