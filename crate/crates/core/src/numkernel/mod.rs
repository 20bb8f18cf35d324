//! Small dense numeric kernel: tensors, layers with hand-written backward
//! passes, loss, optimizer and a finite-difference gradient checker.

pub mod adam;
pub mod dense;
pub mod gradcheck;
pub mod loss;
pub mod lstm;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use dense::{activation, activation_backward, dense_backward, dense_forward, sigmoid, Activation};
pub use gradcheck::grad_check;
pub use loss::{weighted_bce_grad, weighted_bce_loss, BCE_EPS};
pub use lstm::{
    bilstm_backward, bilstm_forward, bilstm_reduce, lstm_cell_backward, lstm_cell_step, register_lstm, BiLstmCache,
    LstmGrads, LstmParams, LstmStepCache,
};
pub use tensor::{GradBuf, ParamStore, Tensor};
