// Wire schema of the gateway's /ws endpoint. Field names are the
// compatibility contract; do not rename.

export interface JointSummary {
  name: string;
  limit_lo_deg: number;
  limit_hi_deg: number;
  home_deg: number;
}

export interface FingerSummary {
  name: string;
  joints: JointSummary[];
}

export interface ModelSummary {
  name: string;
  fingers: FingerSummary[];
}

export interface ScenePayload {
  shape: string;
  center: number[];
  radius: number;
  height: number;
  stiffness: number;
}

export type FingerMode = 'free' | 'engaged';

export interface ModelMessage {
  type: 'model';
  seq: number;
  glove: ModelSummary;
  hand: ModelSummary;
}

export interface SceneMessage {
  type: 'scene';
  seq: number;
  object: ScenePayload | null;
}

export interface StateMessage {
  type: 'state';
  seq: number;
  t: number;
  q_glove: number[];
  q_hand: number[];
  q_hand_meas: number[];
  tips_glove: Record<string, number[]>;
  tips_hand: Record<string, number[]>;
  modes: Record<string, FingerMode>;
  contact_flags: Record<string, boolean>;
  feedback_torques: number[];
  recording: boolean;
  replaying: boolean;
  skeletons: {
    glove: Record<string, number[][]>;
    hand: Record<string, number[][]>;
  };
}

export interface AckMessage {
  type: 'ack';
  seq: number;
  ack_seq: number | null;
  cmd: string;
  path?: string;
}

export interface ErrorMessage {
  type: 'error';
  seq: number;
  ack_seq: number | null;
  message: string;
}

export type ServerMessage =
  | ModelMessage
  | SceneMessage
  | StateMessage
  | AckMessage
  | ErrorMessage;

export interface SetGloveQMessage {
  type: 'set_glove_q';
  seq: number;
  q: number[];
}

export interface RecordMessage {
  type: 'record';
  seq: number;
  on: boolean;
  path: string;
}

export interface ReplayMessage {
  type: 'replay';
  seq: number;
  path: string;
}

export type ClientMessage = SetGloveQMessage | RecordMessage | ReplayMessage | {
  type: 'set_scene' | 'set_params';
  seq: number;
  [key: string]: unknown;
};
