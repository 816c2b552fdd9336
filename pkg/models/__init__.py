# Device models, audio buffers and configuration schemas
