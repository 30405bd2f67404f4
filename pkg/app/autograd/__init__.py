from app.autograd.tensor import Parameter, Tape, Tensor, backward, no_tape

__all__ = ["Parameter", "Tape", "Tensor", "backward", "no_tape"]
