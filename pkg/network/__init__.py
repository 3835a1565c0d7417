# Differentiable building blocks shared by the encoder and decoder
