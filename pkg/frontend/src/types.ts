// Wire contracts of the clinic EMR JSON API. Every shape here mirrors a
// server response or request body verbatim; the client adds nothing.

export type RoleName = 'admin' | 'staff' | 'doctor' | 'laborant' | 'patient';

export interface MenuItem {
  key: string;
  label: string;
  route: string;
}

export interface Capability {
  action: string;
  resource: string;
  scope: 'all' | 'own_only';
}

export interface TransitionRule {
  from: string;
  event: string;
  to: string;
  role: RoleName;
}

/** GET /api/menu — the server's complete statement of what this session may see and do. */
export interface MenuResponse {
  role: RoleName | null;
  items: MenuItem[];
  capabilities: Capability[];
  transitions: TransitionRule[];
}

/** POST /api/login */
export interface LoginResponse {
  token: string;
  user_id: string;
  username: string;
  role: RoleName;
  must_change_password: boolean;
  linked_mrn: string | null;
  assigned_lab: string | null;
}

export type ValueType = 'quantity' | 'text' | 'coded';

export interface FieldRange {
  lo: string;
  hi: string;
}

export interface ArchetypeField {
  name: string;
  value_type: ValueType;
  required: boolean;
  range?: FieldRange;
  unit?: string;
  allowed_values?: string[];
}

/** GET /api/archetypes/{id}; catalog entries omit `source`. */
export interface ArchetypeDefinition {
  archetype_id: string;
  kind: string;
  fields: ArchetypeField[];
  source?: string;
}

export interface QuantityValue {
  type: 'quantity';
  magnitude: string;
  unit: string;
}

export interface TextValue {
  type: 'text';
  value: string;
}

export interface CodedValue {
  type: 'coded';
  code: string;
}

export type EntryFieldValue = QuantityValue | TextValue | CodedValue;

export interface ClinicalEntry {
  entry_id: string;
  kind: string;
  archetype_id: string;
  fields: Record<string, EntryFieldValue>;
  author: string;
  authored_at: string;
}

export interface LabMeasurement {
  magnitude: string;
  unit: string;
}

export interface LabResult {
  result_id: string;
  panel: string;
  measurements: Record<string, LabMeasurement>;
  author: string;
  authored_at: string;
}

export interface TransactionItem {
  item_id: string;
  kind: string;
  cost: number;
  added_by: string;
  treatment_type?: string;
  service_type?: string;
}

export type CardStatus = 'waiting' | 'in_doctor_exam' | 'in_lab_exam' | 'complete';

export interface PatientCard {
  card_id: string;
  mrn: string;
  seq_no: number;
  status: CardStatus;
  opened_by: string;
  opened_at: string;
  entries: ClinicalEntry[];
  lab_results: LabResult[];
  items: TransactionItem[];
  total: number;
  currency: string;
}

export interface Demographics {
  full_name: string;
  birth_date: string;
  religion: string;
  sex: string;
  insurance: string;
  marital_status: string;
  contact: string | null;
}

export interface Patient {
  mrn: string;
  demographics: Demographics;
  created_at: string;
  credential_ref: string | null;
}

export interface ReferralLetter {
  referral_id: string;
  card_id: string;
  mrn: string;
  issuing_doctor: string;
  target_facility: string;
  target_specialty: string | null;
  reason: string;
  issued_at: string;
}

/** GET /api/patients/{mrn} */
export interface PatientRecord {
  patient: Patient;
  cards: PatientCard[];
  referrals: ReferralLetter[];
}

export interface RegistrationResponse {
  patient: Patient;
  credential: {
    username: string;
    one_time_password: string;
    must_change_password: boolean;
  };
}

export interface UserSummary {
  user_id: string;
  username: string;
  role: RoleName;
  active: boolean;
  linked_mrn: string | null;
  assigned_lab: string | null;
  specialty: string | null;
  must_change_password: boolean;
}

export interface ReferenceItem {
  category: string;
  code: string;
  label: string;
}

export interface Page<T> {
  items: T[];
  offset: number;
  limit: number;
  total: number;
}

/** Error envelope every non-2xx response carries. */
export interface ErrorBody {
  status: number;
  code: string;
  message: string;
  details?: unknown;
}
