# Map encoder and decoder-only trajectory forecaster
