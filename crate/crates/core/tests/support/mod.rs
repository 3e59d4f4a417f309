pub mod netpol_oracle;
