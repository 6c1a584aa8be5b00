use eivreg::matcore::Mat;
use pyeivreg::convert::{mat_from_rows, mat_to_rows};

#[test]
fn rows_round_trip() {
    let rows = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
    let m = mat_from_rows(&rows, "m").unwrap();
    assert_eq!(m, Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    assert_eq!(mat_to_rows(&m), rows);
}

#[test]
fn ragged_and_empty_rows_are_rejected() {
    let err = mat_from_rows(&[vec![1.0, 2.0], vec![3.0]], "X").unwrap_err().to_string();
    assert!(err.contains("row 2"), "{err}");
    assert!(mat_from_rows(&[], "X").is_err());
    assert!(mat_from_rows(&[vec![]], "X").is_err());
}
