export { decodeRle, encodeRle, type Rle } from './rle.js';
export { decodePng, encodePng, type RgbImage } from './png.js';
export {
  DEFAULT_CONFIG,
  detect,
  segment,
  type DetectedBox,
  type ModelConfig,
  type SegmentResult,
} from './model.js';
export { PROTO_VERSION, errorReply, handleLine, type Reply } from './protocol.js';
export { serve, serveStream, serveTcp, type ServeConfig, type TcpHandle } from './server.js';
