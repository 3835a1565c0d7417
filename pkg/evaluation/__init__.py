# Forecasting metrics and report files
