//! Empty library; this package only exists to host the `acceptance` test
//! target, which runs once every test of `entdecay` has finished.
